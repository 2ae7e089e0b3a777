//! Gauss–Hermite quadrature for one-dimensional Gaussian expectations.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for the physicists' weight `exp(-x^2)`, computed from
/// the eigen-decomposition of the Hermite Jacobi matrix (Golub–Welsch).
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut jacobi = DMatrix::zeros(order, order);
        for i in 1..order {
            let beta = (i as f64 / 2.0).sqrt();
            jacobi[(i - 1, i)] = beta;
            jacobi[(i, i - 1)] = beta;
        }
        let eigen = SymmetricEigen::new(jacobi);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let first = eigen.eigenvectors[(0, i)];
                (eigen.eigenvalues[i], sqrt_pi * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// `E[f(T)]` for `T ~ N(0, 1)`.
    pub fn standard_normal_mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let norm = 1.0 / std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(scale * x))
            .sum::<f64>()
            * norm
    }
}

/// Shared 64-node rule; plenty for the smooth logistic-type integrands here.
pub fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments_are_exact() {
        let rule = default_rule();
        assert!((rule.standard_normal_mean(|_| 1.0) - 1.0).abs() <= 1e-13);
        assert!(rule.standard_normal_mean(|t| t).abs() <= 1e-13);
        assert!((rule.standard_normal_mean(|t| t * t) - 1.0).abs() <= 1e-12);
        assert!((rule.standard_normal_mean(|t| t.powi(4)) - 3.0).abs() <= 1e-11);
        assert!((rule.standard_normal_mean(|t| t.powi(6)) - 15.0).abs() <= 1e-10);
    }

    #[test]
    fn matches_closed_form_lognormal_mean() {
        // E[exp(aT)] = exp(a^2/2).
        let rule = default_rule();
        for a in [0.1, 0.5, 1.0, 2.0] {
            let got = rule.standard_normal_mean(|t| (a * t).exp());
            assert!((got - (a * a / 2.0).exp()).abs() <= 1e-9 * (a * a / 2.0).exp());
        }
    }
}
