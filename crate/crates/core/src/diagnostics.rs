//! Finite-difference checks of every hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{synth_low_rank, Feedback};
use crate::error::Result;
use crate::mf::{Backbone, BipartiteGraph, MfParams, Sample};
use crate::numerics::{grad_check, GradCheckReport, Matrix, ParamTensor, Parameterized};
use crate::relation::{
    contrastive_loss_grad, user_ratings, ContrastiveSign, InductiveModel, InductiveUser, Normalization, RelationInit, RelationParams,
    ScoreActivation,
};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const FD_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub model: String,
    pub max_relative_error: f64,
    pub probes: usize,
    pub worst: Option<String>,
}

impl GradCheckEntry {
    fn new(model: String, r: GradCheckReport) -> Self {
        GradCheckEntry { model, max_relative_error: r.max_relative_error, probes: r.probes, worst: r.worst.map(|(n, i)| format!("{n}[{i}]")) }
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADIENT_TOLERANCE
    }
}

fn factor_model(backbone: Backbone, feedback: Feedback, seed: u64) -> (MfParams, Vec<Sample>) {
    let (users, items, dim) = (6, 7, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mf = MfParams::init(backbone, dim, 6, (0..users).collect(), items, feedback, &mut rng);
    for t in [&mut mf.user_emb, &mut mf.item_emb] {
        t.value = t.value.scale(10.0);
    }
    mf.global_bias.value.as_mut_slice()[0] = 0.3;
    // predictor biases away from zero keep ReLU units off their kink
    mf.predictor.visit_params_mut(&mut |p| {
        if p.name.ends_with("bias") {
            p.value.fill(0.1);
        }
    });
    let mut samples = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if (u * 3 + i) % 2 == 0 {
                let target = match feedback {
                    Feedback::Explicit => 1.0 + ((u + 2 * i) % 5) as f64,
                    Feedback::Implicit => f64::from((u + i) % 3 == 0),
                };
                samples.push(Sample { row: u, item: i, target });
            }
        }
    }
    if backbone == Backbone::Gc {
        mf.graph = Some(BipartiteGraph::build(samples.iter().map(|s| (s.row, s.item, s.target)), users, items, feedback, 50, seed));
    }
    (mf, samples)
}

fn check_factors(backbone: Backbone, feedback: Feedback, probes: usize, seed: u64) -> GradCheckReport {
    let l2 = 0.05;
    let (mut mf, samples) = factor_model(backbone, feedback, seed);
    mf.zero_grads();
    mf.accumulate_gradients(&samples, l2);
    grad_check(&mut mf, |m| m.regularized_loss(&samples, l2), probes, FD_EPSILON, seed)
}

fn check_relation(backbone: Backbone, norm: Normalization, act: ScoreActivation, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let lambda = 10.0;
    let (ds, _) = synth_low_rank(12, 10, 3, 0.6, 0.0, seed)?;
    let (mut mf, _) = factor_model(backbone, Feedback::Explicit, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh = MfParams::init(backbone, 4, 6, (0..ds.num_users).collect(), ds.num_items, Feedback::Explicit, &mut rng);
    mf.user_emb = ParamTensor::embedding("P", fresh.user_emb.value.scale(10.0));
    mf.item_emb = ParamTensor::embedding("Q", fresh.item_emb.value.scale(10.0));
    mf.user_bias = fresh.user_bias;
    mf.item_bias = fresh.item_bias;
    mf.key_users = fresh.key_users;
    if backbone == Backbone::Gc {
        let edges = ds.ratings.iter().map(|r| (r.user, r.item, r.value));
        mf.graph = Some(BipartiteGraph::build(edges, ds.num_users, ds.num_items, Feedback::Explicit, 50, seed));
    }
    let rel = RelationParams::init(4, 2, 6, ds.num_users, norm, act, RelationInit::Xavier, &mut rng)?;
    let mut model = InductiveModel::new(mf, rel, 10, 50, seed);
    if norm == Normalization::LinearRatio {
        // keep the score sum well away from zero
        for h in &mut model.rel.heads {
            let d = h.e.value.rows() / 2;
            h.e.value.as_mut_slice()[..d].fill(1.0);
        }
    }
    let hist = user_ratings(&ds, &(0..ds.ratings.len()).collect::<Vec<_>>());
    let users: Vec<InductiveUser> =
        (0..5).map(|u| model.prepare_user(u, Some(u), &hist[u], hist[u].clone())).collect::<Result<_>>()?;
    let refs: Vec<&InductiveUser> = users.iter().collect();
    model.zero_grads();
    model.accumulate(&refs, lambda, ContrastiveSign::Nll, true)?;
    Ok(grad_check(
        &mut model,
        |m| m.objective(&refs, lambda, ContrastiveSign::Nll).map(|l| l.total(lambda)).unwrap_or(f64::NAN),
        probes,
        FD_EPSILON,
        seed,
    ))
}

struct Contrastive {
    p: Matrix,
    p_tilde: ParamTensor,
}

impl Parameterized for Contrastive {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.p_tilde);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.p_tilde);
    }
}

fn check_contrastive(probes: usize, seed: u64) -> GradCheckReport {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect())
            .expect("shape")
    };
    let p = draw(6, 4);
    let mut m = Contrastive { p_tilde: ParamTensor::new("p_tilde", draw(6, 4)), p };
    let (_, g) = contrastive_loss_grad(&m.p, &m.p_tilde.value, ContrastiveSign::Nll);
    m.p_tilde.grad = g;
    grad_check(&mut m, |m| contrastive_loss_grad(&m.p, &m.p_tilde.value, ContrastiveSign::Nll).0, probes, FD_EPSILON, seed)
}

/// Runs every check with `probes` random coordinates each.
pub fn gradient_suite(probes: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut out = Vec::new();
    for backbone in [Backbone::Dot, Backbone::Nn, Backbone::Gc] {
        for feedback in [Feedback::Explicit, Feedback::Implicit] {
            let name = format!("mf.{backbone}.{}", if feedback == Feedback::Explicit { "explicit" } else { "implicit" });
            out.push(GradCheckEntry::new(name, check_factors(backbone, feedback, probes, seed)));
        }
    }
    for backbone in [Backbone::Dot, Backbone::Nn, Backbone::Gc] {
        for (norm, act, tag) in [
            (Normalization::Softmax, ScoreActivation::Identity, "softmax"),
            (Normalization::Softmax, ScoreActivation::LeakyRelu, "softmax_leaky_relu"),
            (Normalization::LinearRatio, ScoreActivation::Identity, "linear_ratio"),
        ] {
            out.push(GradCheckEntry::new(format!("relation.{backbone}.{tag}"), check_relation(backbone, norm, act, probes, seed)?));
        }
    }
    out.push(GradCheckEntry::new("contrastive".into(), check_contrastive(probes, seed)));
    Ok(out)
}
