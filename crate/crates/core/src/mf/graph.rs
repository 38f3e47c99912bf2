use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Feedback;

/// Number of rating levels aggregated separately by the graph backbone.
pub const EXPLICIT_LEVELS: usize = 5;

/// Neighbor indices grouped by rating level, each list sorted ascending.
pub type LevelNeighbors = Vec<Vec<usize>>;

pub fn levels_for(feedback: Feedback) -> usize {
    match feedback {
        Feedback::Explicit => EXPLICIT_LEVELS,
        Feedback::Implicit => 1,
    }
}

/// Level index of a rating; implicit negatives have none.
pub fn rating_level(value: f64, feedback: Feedback) -> Option<usize> {
    match feedback {
        Feedback::Explicit => Some((value.round().clamp(1.0, EXPLICIT_LEVELS as f64) as usize) - 1),
        Feedback::Implicit if value > 0.0 => Some(0),
        Feedback::Implicit => None,
    }
}

/// One-hop neighborhoods of the key-user/item bipartite rating graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub levels: usize,
    pub cap: usize,
    /// Per key-user row: rated items per level.
    pub user_neighbors: Vec<LevelNeighbors>,
    /// Per item: key-user rows per level.
    pub item_neighbors: Vec<LevelNeighbors>,
}

impl BipartiteGraph {
    /// `edges` yields `(user_row, item, value)` for training ratings.
    pub fn build(
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        num_rows: usize,
        num_items: usize,
        feedback: Feedback,
        cap: usize,
        seed: u64,
    ) -> Self {
        let levels = levels_for(feedback);
        let mut user_neighbors = vec![vec![Vec::new(); levels]; num_rows];
        let mut item_neighbors = vec![vec![Vec::new(); levels]; num_items];
        for (row, item, value) in edges {
            if let Some(m) = rating_level(value, feedback) {
                user_neighbors[row][m].push(item);
                item_neighbors[item][m].push(row);
            }
        }
        for (node, lists) in user_neighbors.iter_mut().enumerate() {
            finalize(lists, cap, node_seed(seed, 0, node));
        }
        for (node, lists) in item_neighbors.iter_mut().enumerate() {
            finalize(lists, cap, node_seed(seed, 1, node));
        }
        BipartiteGraph { levels, cap, user_neighbors, item_neighbors }
    }
}

/// Level neighbors for a user outside the graph, from `(item, rating)` pairs.
pub fn neighbors_from_history(history: &[(usize, f64)], feedback: Feedback, cap: usize, seed: u64) -> LevelNeighbors {
    let mut lists = vec![Vec::new(); levels_for(feedback)];
    for &(item, value) in history {
        if let Some(m) = rating_level(value, feedback) {
            lists[m].push(item);
        }
    }
    finalize(&mut lists, cap, node_seed(seed, 2, 0));
    lists
}

fn node_seed(seed: u64, side: u64, node: usize) -> u64 {
    seed ^ (side.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ (node as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Sorts, dedups and, past `cap`, keeps a seeded subsample. The sort happens
/// first so the result does not depend on input order.
fn finalize(lists: &mut LevelNeighbors, cap: usize, seed: u64) {
    for (m, list) in lists.iter_mut().enumerate() {
        list.sort_unstable();
        list.dedup();
        if cap > 0 && list.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(m as u64));
            let mut kept: Vec<usize> = sample(&mut rng, list.len(), cap).into_iter().map(|k| list[k]).collect();
            kept.sort_unstable();
            *list = kept;
        }
    }
}
