//! Rating and ranking metrics plus per-cohort evaluation.

mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use metrics::{auc, ndcg, rank_by_score, rmse, user_ndcg};

use crate::data::{sample_negatives, Feedback, RatingDataset, SplitIndices, UserPartition, DEFAULT_NEGATIVE_RATIO};
use crate::error::{ConfigError, EvalError, Result};
use crate::mf::MfParams;
use crate::relation::{user_ratings, InductiveModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    All,
    FewShot,
    New,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::All => "all",
            Cohort::FewShot => "few_shot",
            Cohort::New => "new",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Cohort::All),
            "few_shot" => Ok(Cohort::FewShot),
            "new" => Ok(Cohort::New),
            other => Err(ConfigError::invalid("eval.cohorts", format!("unknown cohort `{other}` (expected all, few_shot or new)"))),
        }
    }
}

/// What to score with: the factorization alone, or the factorization plus an
/// adapted relation model (whose predictor may have been finetuned).
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    Transductive(&'a MfParams),
    Inductive(&'a InductiveModel),
}

impl<'a> Scorer<'a> {
    pub fn mf(&self) -> &'a MfParams {
        match *self {
            Scorer::Transductive(mf) => mf,
            Scorer::Inductive(model) => &model.mf,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// NDCG cutoff; `None` ranks each user's full test list.
    pub ndcg_k: Option<usize>,
    /// Negatives per positive in the implicit-feedback test set.
    pub negative_ratio: usize,
    pub negative_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { ndcg_k: None, negative_ratio: DEFAULT_NEGATIVE_RATIO, negative_seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cohort: Cohort,
    pub rmse: Option<f64>,
    pub ndcg: Option<f64>,
    pub auc: Option<f64>,
    pub num_users: usize,
    pub num_pairs: usize,
}

impl MetricsReport {
    /// `(metric, value)` for every metric present, in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        [("rmse", self.rmse), ("ndcg", self.ndcg), ("auc", self.auc)].into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
    }
}

pub const METRICS_HEADER: [&str; 5] = ["cohort", "metric", "value", "num_users", "num_pairs"];

pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in reports {
        for (metric, value) in r.metrics() {
            w.write_record([r.cohort.as_str(), metric, &value.to_string(), &r.num_users.to_string(), &r.num_pairs.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Scores the test ratings of one cohort.
///
/// Key users are scored from their own rows. Everyone else gets an embedding
/// inferred from their training-split history, which needs a relation model.
/// `all` covers every test rating, `few_shot` and `new` only query users.
pub fn evaluate(
    scorer: Scorer<'_>,
    ds: &RatingDataset,
    split: &SplitIndices,
    partition: &UserPartition,
    cohort: Cohort,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if cohort == Cohort::New && !matches!(scorer, Scorer::Inductive(_)) {
        return Err(EvalError::NeedsRelationModel("new").into());
    }
    let mf = scorer.mf();
    let in_cohort = |u: usize| match cohort {
        Cohort::All => true,
        Cohort::FewShot | Cohort::New => partition.is_query(u),
    };
    let test: Vec<usize> = split.test.iter().copied().filter(|&k| in_cohort(ds.ratings[k].user)).collect();
    let mut pairs: Vec<(usize, usize, f64)> = test.iter().map(|&k| (ds.ratings[k].user, ds.ratings[k].item, ds.ratings[k].value)).collect();
    if ds.feedback == Feedback::Implicit {
        pairs.extend(sample_negatives(ds, &test, opts.negative_ratio, opts.negative_seed).into_iter().map(|r| (r.user, r.item, r.value)));
    }
    if pairs.is_empty() {
        return Err(EvalError::Empty("cohort").into());
    }

    // user -> [(item, score, truth)] with items ascending
    let mut by_user: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for &(u, i, v) in &pairs {
        by_user.entry(u).or_default().push((i, 0.0, v));
    }
    let history = user_ratings(ds, &split.train);
    for (&u, items) in by_user.iter_mut() {
        match (mf.key_row(u), scorer) {
            (Some(row), _) => {
                let input = mf.key_input(row);
                for it in items.iter_mut() {
                    it.1 = mf.predict_input(&input, it.0)?;
                }
            }
            (None, Scorer::Inductive(model)) => {
                let positives: Vec<(usize, f64)> = history[u].iter().copied().filter(|h| h.1 > 0.0).collect();
                let inferred = model.infer_user(&positives)?;
                for it in items.iter_mut() {
                    it.1 = model.score(&inferred, it.0)?;
                }
            }
            (None, Scorer::Transductive(_)) => return Err(EvalError::NeedsRelationModel(cohort.as_str()).into()),
        }
        items.sort_by_key(|it| it.0);
    }

    let num_pairs = pairs.len();
    let lists: Vec<Vec<(f64, f64)>> = by_user.values().map(|items| items.iter().map(|it| (it.1, it.2)).collect()).collect();
    let mut report = MetricsReport { cohort, rmse: None, ndcg: None, auc: None, num_users: by_user.len(), num_pairs };
    match ds.feedback {
        Feedback::Explicit => {
            let (pred, truth): (Vec<f64>, Vec<f64>) = lists.iter().flatten().map(|&(s, t)| (s.clamp(1.0, 5.0), t)).unzip();
            report.rmse = Some(rmse(&pred, &truth)?);
            report.ndcg = Some(ndcg(&lists, opts.ndcg_k)?);
        }
        Feedback::Implicit => {
            let (pos, neg): (Vec<(f64, f64)>, Vec<(f64, f64)>) = lists.iter().flatten().partition(|x| x.1 > 0.0);
            let pos: Vec<f64> = pos.into_iter().map(|x| x.0).collect();
            let neg: Vec<f64> = neg.into_iter().map(|x| x.0).collect();
            report.auc = Some(auc(&pos, &neg)?);
            report.ndcg = Some(ndcg(&lists, opts.ndcg_k)?);
        }
    }
    Ok(report)
}
