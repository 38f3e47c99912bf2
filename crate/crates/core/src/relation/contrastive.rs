use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, dot, Matrix};

/// Sign of the in-batch contrastive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveSign {
    /// Negative log-likelihood of matching each user with their own
    /// inductive embedding; minimizing it pulls `p_u` and `p̃_u` together.
    #[default]
    Nll,
    /// The mean log-likelihood itself, as printed in the original objective.
    LogLikelihood,
}

/// `-(1/B) Σ_u log[exp(p_u·p̃_u) / Σ_v exp(p_u·p̃_v)]` over aligned rows.
pub fn contrastive_loss(p: &Matrix, p_tilde: &Matrix) -> f64 {
    contrastive_loss_grad(p, p_tilde, ContrastiveSign::Nll).0
}

/// Loss under `sign` and its gradient w.r.t. `p_tilde`.
pub fn contrastive_loss_grad(p: &Matrix, p_tilde: &Matrix, sign: ContrastiveSign) -> (f64, Matrix) {
    let b = p.rows();
    let mut grad = Matrix::zeros(p_tilde.rows(), p_tilde.cols());
    if b == 0 {
        return (0.0, grad);
    }
    let s = match sign {
        ContrastiveSign::Nll => 1.0,
        ContrastiveSign::LogLikelihood => -1.0,
    };
    let mut total = 0.0;
    let mut logits = vec![0.0; b];
    for u in 0..b {
        for (v, l) in logits.iter_mut().enumerate() {
            *l = dot(p.row(u), p_tilde.row(v));
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
        total += m + denom.ln() - logits[u];
        for v in 0..b {
            let prob = (logits[v] - m).exp() / denom;
            let coeff = prob - if u == v { 1.0 } else { 0.0 };
            axpy(s * coeff / b as f64, p.row(u), grad.row_mut(v));
        }
    }
    (s * total / b as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_user_has_zero_loss() {
        let p = Matrix::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let pt = Matrix::from_rows(&[vec![1.0, 4.0]]).unwrap();
        assert_eq!(contrastive_loss(&p, &pt), 0.0);
    }

    #[test]
    fn equal_dots_give_ln_two() {
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let pt = Matrix::from_rows(&[vec![2.0, 1.0], vec![2.0, -1.0]]).unwrap();
        assert!((contrastive_loss(&p, &pt) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn separated_pairs() {
        let p = Matrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        let pt = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((contrastive_loss(&p, &pt) - expected).abs() < 1e-15);
        assert!((expected - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn literal_sign_negates() {
        let p = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let pt = Matrix::from_rows(&[vec![0.2, 0.1], vec![0.7, -0.3]]).unwrap();
        let (a, ga) = contrastive_loss_grad(&p, &pt, ContrastiveSign::Nll);
        let (b, gb) = contrastive_loss_grad(&p, &pt, ContrastiveSign::LogLikelihood);
        assert_eq!(a, -b);
        assert_eq!(ga, gb.scale(-1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 0.3], vec![0.2, -0.4, 1.1]]).unwrap();
        let pt = Matrix::from_rows(&[vec![0.2, 0.1, 0.9], vec![0.7, -0.3, 0.0], vec![-0.5, 0.6, 0.2]]).unwrap();
        let (_, g) = contrastive_loss_grad(&p, &pt, ContrastiveSign::Nll);
        for r in 0..3 {
            for c in 0..3 {
                let mut plus = pt.clone();
                let mut minus = pt.clone();
                plus.set(r, c, pt.get(r, c) + 1e-6);
                minus.set(r, c, pt.get(r, c) - 1e-6);
                let fd = (contrastive_loss(&p, &plus) - contrastive_loss(&p, &minus)) / 2e-6;
                assert!((fd - g.get(r, c)).abs() < 1e-8);
            }
        }
    }
}
