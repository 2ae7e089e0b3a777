//! Loss models with exact gradients and Hessians, plus the finite-difference
//! oracles used to verify them.
//!
//! All agents share one loss (homogeneous suite, zero gradient disagreement);
//! heterogeneity across agents enters through the stochastic oracle's noise.

mod nn_saddle;
mod oracle;
pub mod quadrature;

pub use nn_saddle::NNSaddleLoss;
pub use oracle::{estimate_noise_constants, NoiseConstantEstimate, StochasticOracle};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("parameter has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-finite {what} at evaluation (overflow or bad input)")]
    NonFinite { what: &'static str },
    #[error("invalid agent index {agent} for {agents} agents")]
    InvalidAgent { agent: usize, agents: usize },
    #[error("need at least {min} draws, got {got}")]
    InsufficientDraws { got: usize, min: usize },
    #[error("isotropic noise std for agent {agent} must be finite and >= 0, got {value}")]
    BadIsotropicStd { agent: usize, value: f64 },
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
}

/// Declared smoothness constants: gradient-Lipschitz `delta`, Hessian-Lipschitz
/// bound, and the cross-agent gradient-disagreement bound (zero here, since the
/// suite is homogeneous).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub grad_lipschitz: f64,
    pub hessian_lipschitz: f64,
    pub grad_disagreement: f64,
}

/// An evaluable cost with exact gradient and Hessian.
///
/// `sample_data_gradient` is the per-draw gradient for losses defined as an
/// expectation over data; the default (`None`) marks a degenerate data
/// distribution whose sampled gradient equals the exact one.
pub trait LossModel: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, w: &DVector<f64>) -> f64;

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;

    /// Symmetric Hessian; defaults to symmetrized central differences of the
    /// exact gradient with per-coordinate step `1e-4 * (1 + |w_j|)`.
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let raw = fd_hessian_raw(self, w);
        0.5 * (&raw + raw.transpose())
    }

    /// Global minimum value when known.
    fn known_minimum(&self) -> Option<f64> {
        None
    }

    fn smoothness(&self) -> Smoothness;

    fn sample_data_gradient(&self, w: &DVector<f64>, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
        let _ = (w, rng);
        None
    }
}

fn check_dim(model: &(impl LossModel + ?Sized), w: &DVector<f64>) -> Result<(), LandscapeError> {
    if w.len() != model.dim() {
        return Err(LandscapeError::DimensionMismatch {
            got: w.len(),
            expected: model.dim(),
        });
    }
    Ok(())
}

/// Exact value and gradient, with dimension and finiteness guards.
pub fn eval_loss(
    model: &(impl LossModel + ?Sized),
    w: &DVector<f64>,
) -> Result<(f64, DVector<f64>), LandscapeError> {
    check_dim(model, w)?;
    let value = model.value(w);
    if !value.is_finite() {
        return Err(LandscapeError::NonFinite { what: "value" });
    }
    let gradient = model.gradient(w);
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(LandscapeError::NonFinite { what: "gradient" });
    }
    Ok((value, gradient))
}

/// Symmetric Hessian with a dimension guard.
pub fn eval_hessian(
    model: &(impl LossModel + ?Sized),
    w: &DVector<f64>,
) -> Result<DMatrix<f64>, LandscapeError> {
    check_dim(model, w)?;
    Ok(model.hessian(w))
}

/// Central finite differences of the value; step `1e-6 * (1 + |w_j|)`.
pub fn fd_gradient(model: &(impl LossModel + ?Sized), w: &DVector<f64>) -> DVector<f64> {
    let mut grad = DVector::zeros(w.len());
    let mut probe = w.clone();
    for j in 0..w.len() {
        let h = 1e-6 * (1.0 + w[j].abs());
        probe[j] = w[j] + h;
        let plus = model.value(&probe);
        probe[j] = w[j] - h;
        let minus = model.value(&probe);
        probe[j] = w[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Central finite differences of the gradient, unsymmetrized; step
/// `1e-4 * (1 + |w_j|)`. The raw asymmetry of this matrix is itself a check
/// that the gradient is a true gradient field.
pub fn fd_hessian_raw(model: &(impl LossModel + ?Sized), w: &DVector<f64>) -> DMatrix<f64> {
    let dim = w.len();
    let mut hess = DMatrix::zeros(dim, dim);
    let mut probe = w.clone();
    for j in 0..dim {
        let h = 1e-4 * (1.0 + w[j].abs());
        probe[j] = w[j] + h;
        let plus = model.gradient(&probe);
        probe[j] = w[j] - h;
        let minus = model.gradient(&probe);
        probe[j] = w[j];
        let column = (plus - minus) / (2.0 * h);
        hess.set_column(j, &column);
    }
    hess
}

/// Worst per-axis relative error between the analytic gradient and central
/// finite differences at `w`.
pub fn check_gradient(
    model: &(impl LossModel + ?Sized),
    w: &DVector<f64>,
) -> Result<f64, LandscapeError> {
    check_dim(model, w)?;
    let analytic = model.gradient(w);
    let numeric = fd_gradient(model, w);
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        let rel = (analytic[j] - numeric[j]).abs() / analytic[j].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient-Lipschitz and Hessian-Lipschitz estimates from Hessian spectral
/// norms sampled uniformly in a box of half-width `radius` around the origin.
pub fn estimate_smoothness(
    model: &(impl LossModel + ?Sized),
    samples: usize,
    radius: f64,
    seed: u64,
) -> Smoothness {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, 0x500f, 0);
    let mut delta = 0.0f64;
    let mut rho = 0.0f64;
    let mut previous: Option<(DVector<f64>, DMatrix<f64>)> = None;
    for _ in 0..samples {
        let w = DVector::from_fn(model.dim(), |_, _| {
            radius * (2.0 * rng.random::<f64>() - 1.0)
        });
        let hess = model.hessian(&w);
        let spectral = nalgebra::SymmetricEigen::new(hess.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, l| m.max(l.abs()));
        delta = delta.max(spectral);
        if let Some((prev_w, prev_h)) = &previous {
            let dist = (&w - prev_w).norm();
            if dist > 1e-9 {
                let diff = nalgebra::SymmetricEigen::new(&hess - prev_h)
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |m, l| m.max(l.abs()));
                rho = rho.max(diff / dist);
            }
        }
        previous = Some((w, hess));
    }
    Smoothness {
        grad_lipschitz: delta,
        hessian_lipschitz: rho,
        grad_disagreement: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Quadratic test landscapes
// ---------------------------------------------------------------------------

/// `J(w) = 1/2 Σ d_j w_j²` with exact constant Hessian `diag(d)`.
#[derive(Debug, Clone)]
pub struct DiagQuadratic {
    diag: DVector<f64>,
}

impl DiagQuadratic {
    pub fn new(diag: Vec<f64>) -> Self {
        DiagQuadratic {
            diag: DVector::from_vec(diag),
        }
    }

    /// `1/2 ||w||²` in `dim` dimensions.
    pub fn isotropic(dim: usize) -> Self {
        DiagQuadratic {
            diag: DVector::from_element(dim, 1.0),
        }
    }

    /// The two-dimensional strict saddle `1/2 (w_1² - w_2²)`.
    pub fn saddle2() -> Self {
        DiagQuadratic::new(vec![1.0, -1.0])
    }
}

impl LossModel for DiagQuadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w
            .iter()
            .zip(self.diag.iter())
            .map(|(&x, &d)| d * x * x)
            .sum::<f64>()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        w.component_mul(&self.diag)
    }

    fn hessian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }

    fn known_minimum(&self) -> Option<f64> {
        if self.diag.iter().all(|&d| d > 0.0) {
            Some(0.0)
        } else {
            None
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness {
            grad_lipschitz: self.diag.iter().fold(0.0f64, |m, d| m.max(d.abs())),
            hessian_lipschitz: 0.0,
            grad_disagreement: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn quadratic_value_and_gradient() {
        let model = DiagQuadratic::isotropic(2);
        let (value, gradient) = eval_loss(&model, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(value, 12.5);
        assert_eq!(gradient, DVector::from_vec(vec![3.0, 4.0]));
    }

    #[test]
    fn saddle_quadratic_origin_is_stationary() {
        let model = DiagQuadratic::saddle2();
        let (value, gradient) = eval_loss(&model, &DVector::zeros(2)).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(gradient.amax(), 0.0);
        assert_eq!(check_gradient(&model, &DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_hessian_is_constant_diag() {
        let model = DiagQuadratic::saddle2();
        for w in [DVector::zeros(2), DVector::from_vec(vec![2.0, -1.0])] {
            let h = eval_hessian(&model, &w).unwrap();
            assert_eq!(h, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = DiagQuadratic::isotropic(3);
        assert!(matches!(
            eval_loss(&model, &DVector::zeros(2)),
            Err(LandscapeError::DimensionMismatch { got: 2, expected: 3 })
        ));
    }

    #[test]
    fn gradient_check_quadratic_random_points() {
        let model = DiagQuadratic::new(vec![1.0, -2.0, 0.5, 3.0]);
        let mut rng = crate::rng::stream(11, 0, 0);
        for _ in 0..100 {
            let w = DVector::from_fn(4, |_, _| 4.0 * rng.random::<f64>() - 2.0);
            assert!(check_gradient(&model, &w).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn fd_hessian_matches_exact_for_quadratic() {
        let model = DiagQuadratic::new(vec![2.0, -1.0, 0.5]);
        let w = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let fd = fd_hessian_raw(&model, &w);
        let exact = model.hessian(&w);
        assert!((fd - exact).amax() <= 1e-9);
    }

    #[test]
    fn smoothness_estimate_recovers_quadratic_delta() {
        let model = DiagQuadratic::new(vec![1.0, -3.0]);
        let est = estimate_smoothness(&model, 50, 2.0, 5);
        assert!((est.grad_lipschitz - 3.0).abs() <= 1e-9);
        assert!(est.hessian_lipschitz.abs() <= 1e-6);
    }
}
