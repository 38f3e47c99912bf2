use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Parameterized;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Tensor name and flat index of the worst probe.
    pub worst: Option<(String, usize)>,
}

/// Compares the analytic gradients currently stored in `model` against central
/// finite differences of `loss_fn` on `probe_count` randomly chosen coordinates.
///
/// The caller must have populated every tensor's `grad` for the current values.
/// Relative error per probe is `|a - fd| / max(floor, |a| + |fd|)`, where the
/// floor is the larger of `1e-8` and the rounding level of the difference
/// quotient, `1e4 · eps · max(1, |L|) / h`.
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F, probe_count: usize, fd_epsilon: f64, seed: u64) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&M) -> f64,
{
    let total = model.param_count();
    if total == 0 || probe_count == 0 {
        return GradCheckReport { max_relative_error: 0.0, probes: 0, worst: None };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_relative_error: 0.0, probes: probe_count, worst: None };
    // Rounding in the central difference is about eps·|L|/h; a gradient
    // below that is indistinguishable from zero.
    let floor = f64::max(1e-8, 1e4 * f64::EPSILON * loss_fn(model).abs().max(1.0) / fd_epsilon);
    for _ in 0..probe_count {
        let coord = rng.random_range(0..total);
        let (name, local, analytic) = locate(model, coord);
        let original = nudge(model, coord, None);
        nudge(model, coord, Some(original + fd_epsilon));
        let plus = loss_fn(model);
        nudge(model, coord, Some(original - fd_epsilon));
        let minus = loss_fn(model);
        nudge(model, coord, Some(original));
        let fd = (plus - minus) / (2.0 * fd_epsilon);
        let err = (analytic - fd).abs() / f64::max(floor, analytic.abs() + fd.abs());
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((name, local));
        }
    }
    report
}

fn locate<M: Parameterized>(model: &M, coord: usize) -> (String, usize, f64) {
    let mut offset = 0;
    let mut found = None;
    model.visit_params(&mut |p| {
        let n = p.value.len();
        if found.is_none() && coord < offset + n {
            let local = coord - offset;
            found = Some((p.name.clone(), local, p.grad.as_slice().get(local).copied().unwrap_or(0.0)));
        }
        offset += n;
    });
    found.expect("coordinate within parameter count")
}

/// Reads the coordinate's value and, when `set` is given, overwrites it.
fn nudge<M: Parameterized>(model: &mut M, coord: usize, set: Option<f64>) -> f64 {
    let mut offset = 0;
    let mut old = f64::NAN;
    model.visit_params_mut(&mut |p| {
        let n = p.value.len();
        if coord >= offset && coord < offset + n {
            let slot = &mut p.value.as_mut_slice()[coord - offset];
            old = *slot;
            if let Some(v) = set {
                *slot = v;
            }
        }
        offset += n;
    });
    old
}
