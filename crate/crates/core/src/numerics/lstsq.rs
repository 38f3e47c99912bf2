//! Minimum-norm solutions of `Aᵀc = y`, i.e. expressing a target embedding as
//! a linear combination `cᵀA` of the rows of `A`.
//!
//! Full-rank inputs go through a Householder QR of `A`; rank-deficient inputs
//! fall back to an eigen-decomposition pseudo-inverse of the Gram matrix.

use super::matrix::dot;
use super::Matrix;
use crate::error::NumericsError;

/// Relative threshold on `min |R_jj| / max |R_jj|` below which `A` is treated
/// as rank deficient.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresSolution {
    /// Combination weights, one per row of `A`.
    pub coefficients: Vec<f64>,
    /// `‖Aᵀc − y‖₂`.
    pub residual: f64,
    pub degenerate: bool,
}

/// Solves `cᵀA = yᵀ` for `c` (length `A.rows()`), returning the minimum-norm solution.
pub fn least_squares_solve(a: &Matrix, y: &[f64]) -> Result<LeastSquaresSolution, NumericsError> {
    let (m, d) = a.shape();
    if d > m {
        return Err(NumericsError::Underdetermined { rows: m, cols: d });
    }
    if y.len() != d {
        return Err(NumericsError::ShapeMismatch { op: "least_squares_solve", left: a.shape(), right: (y.len(), 1) });
    }
    if !a.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("least_squares_solve"));
    }

    let qr = HouseholderQr::new(a);
    let diag: Vec<f64> = (0..d).map(|j| qr.r.get(j, j).abs()).collect();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let min_diag = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let degenerate = d > 0 && (max_diag == 0.0 || min_diag / max_diag < DEGENERACY_THRESHOLD);

    let coefficients = if d == 0 {
        vec![0.0; m]
    } else if degenerate {
        gram_pseudo_inverse_solve(a, y)
    } else {
        // Rᵀ z = y by forward substitution, then c = Q z.
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= qr.r.get(k, i) * z[k];
            }
            z[i] = s / qr.r.get(i, i);
        }
        qr.apply_q(&z)
    };

    let residual = residual_norm(a, &coefficients, y);
    Ok(LeastSquaresSolution { coefficients, residual, degenerate })
}

/// `‖Aᵀc − y‖₂`.
pub fn residual_norm(a: &Matrix, c: &[f64], y: &[f64]) -> f64 {
    let reconstructed = a.tr_mul_vec(c);
    reconstructed.iter().zip(y).map(|(r, t)| (r - t) * (r - t)).sum::<f64>().sqrt()
}

struct HouseholderQr {
    /// Reflector vectors, each of length `m` with zeros above its pivot.
    reflectors: Vec<Vec<f64>>,
    r: Matrix,
    m: usize,
}

impl HouseholderQr {
    fn new(a: &Matrix) -> Self {
        let (m, d) = a.shape();
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(d);
        for j in 0..d {
            let mut v = vec![0.0; m];
            for i in j..m {
                v[i] = work.get(i, j);
            }
            let norm = v[j..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                reflectors.push(vec![0.0; m]);
                continue;
            }
            let alpha = if v[j] >= 0.0 { -norm } else { norm };
            v[j] -= alpha;
            let vnorm = v[j..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if vnorm == 0.0 {
                reflectors.push(vec![0.0; m]);
                continue;
            }
            v[j..].iter_mut().for_each(|x| *x /= vnorm);
            for c in j..d {
                let mut s = 0.0;
                for i in j..m {
                    s += v[i] * work.get(i, c);
                }
                for i in j..m {
                    let val = work.get(i, c) - 2.0 * v[i] * s;
                    work.set(i, c, val);
                }
            }
            reflectors.push(v);
        }
        let mut r = Matrix::zeros(d, d);
        for i in 0..d {
            for c in i..d {
                r.set(i, c, work.get(i, c));
            }
        }
        HouseholderQr { reflectors, r, m }
    }

    /// `Q [z; 0]` for the thin factor `Q`.
    fn apply_q(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.m];
        x[..z.len()].copy_from_slice(z);
        for v in self.reflectors.iter().rev() {
            let s = dot(v, &x);
            if s != 0.0 {
                for (xi, vi) in x.iter_mut().zip(v) {
                    *xi -= 2.0 * s * vi;
                }
            }
        }
        x
    }
}

/// `c = A (AᵀA)⁺ y` with the pseudo-inverse taken from a Jacobi eigen-decomposition.
fn gram_pseudo_inverse_solve(a: &Matrix, y: &[f64]) -> Vec<f64> {
    let d = a.cols();
    let at = a.transpose();
    let mut gram = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            gram.set(i, j, dot(at.row(i), at.row(j)));
        }
    }
    let (eigvals, eigvecs) = symmetric_eigen(&gram);
    let lambda_max = eigvals.iter().cloned().fold(0.0, f64::max);
    let cutoff = lambda_max * 1e-12;
    // w = V Λ⁺ Vᵀ y
    let mut w = vec![0.0; d];
    for k in 0..d {
        if eigvals[k] > cutoff && eigvals[k] > 0.0 {
            let mut proj = 0.0;
            for i in 0..d {
                proj += eigvecs.get(i, k) * y[i];
            }
            let s = proj / eigvals[k];
            for i in 0..d {
                w[i] += s * eigvecs.get(i, k);
            }
        }
    }
    a.mul_vec(&w)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues and a matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(s: &Matrix) -> (Vec<f64>, Matrix) {
    let n = s.rows();
    let mut a = s.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}
