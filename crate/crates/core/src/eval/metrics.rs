use std::cmp::Ordering;

use crate::error::EvalError;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("rmse"));
    }
    let se: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

/// Positions `0..n` ordered by descending score; equal scores keep their
/// original (ascending) order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn dcg(gains: impl Iterator<Item = f64>, cutoff: usize) -> f64 {
    gains.take(cutoff).enumerate().map(|(pos, g)| g / ((pos + 2) as f64).log2()).sum()
}

/// NDCG of one user's `(score, relevance)` list, or `None` when no ordering
/// has positive gain.
pub fn user_ndcg(items: &[(f64, f64)], cutoff: Option<usize>) -> Option<f64> {
    let k = cutoff.unwrap_or(items.len());
    let scores: Vec<f64> = items.iter().map(|x| x.0).collect();
    let mut ideal: Vec<f64> = items.iter().map(|x| x.1).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(rank_by_score(&scores).into_iter().map(|i| items[i].1), k) / idcg)
}

/// Mean NDCG over users. Each list is ranked by descending score with ties
/// going to the earlier entry; users whose ideal DCG is zero are skipped.
pub fn ndcg(per_user: &[Vec<(f64, f64)>], cutoff: Option<usize>) -> Result<f64, EvalError> {
    if per_user.is_empty() || per_user.iter().any(|u| u.is_empty()) {
        return Err(EvalError::Empty("ndcg"));
    }
    let scored: Vec<f64> = per_user.iter().filter_map(|u| user_ndcg(u, cutoff)).collect();
    if scored.is_empty() {
        return Err(EvalError::AllUsersExcluded);
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

/// Probability that a positive outranks a negative, ties counting one half.
/// Computed from midranks of the pooled scores.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::Empty("auc"));
    }
    let mut pooled: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start;
        while end < pooled.len() && pooled[end].0.total_cmp(&pooled[start].0) == Ordering::Equal {
            end += 1;
        }
        let positives = pooled[start..end].iter().filter(|x| x.1).count() as u128;
        // ranks start+1 ..= end, midrank (start + 1 + end) / 2
        twice_rank_sum += positives * (start + 1 + end) as u128;
        start = end;
    }
    let np = pos.len() as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * neg.len() as u128) as f64)
}
