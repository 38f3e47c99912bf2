//! Inductive collaborative filtering.
//!
//! Stage one factorizes the ratings of a set of *key users* into user and
//! item embeddings ([`mf`]). Stage two trains a multi-head attention model
//! ([`relation`]) that expresses any other user's embedding as a weighted
//! combination of the key users' embeddings, driven only by the items that
//! user has rated. New users can then be scored without retraining.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod mf;
pub mod numerics;
pub mod relation;

pub use error::{Error, Result};
pub use numerics::{AdamConfig, Matrix, ParamTensor, Parameterized};
