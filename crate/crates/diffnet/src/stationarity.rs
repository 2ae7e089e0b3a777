//! Region classification and empirical saddle-escape measurement.
//!
//! The parameter space splits into three regions: large-gradient points
//! (`G`), approximately stationary points with a significant negative Hessian
//! eigenvalue (`H`, strict saddles), and second-order stationary points
//! (`M`). The gradient threshold couples the effective step size, the
//! gradient-Lipschitz constant and the aggregated noise level through
//! `c1 = (1 - 2 mu' delta)/2` and `c2 = (delta/2) Σ p_k² σ_k²`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{self, EngineError, NetworkState, StepConfig};
use crate::landscape::{LandscapeError, LossModel, StochasticOracle};
use crate::topology::{CombinationPolicy, NoiseProfile, TopologyError};

/// Dense eigen-solve guard; matrices larger than this are refused.
pub const MIN_EIG_DIM_GUARD: usize = 2_500;

#[derive(Debug, Error)]
pub enum StationarityError {
    #[error("c1 = (1 - 2 mu' delta)/2 = {0} is not positive; require mu' * delta < 1/2")]
    NonPositiveC1(f64),
    #[error("c2 = (delta/2) Σ p_k² σ_k² = {0} is not positive")]
    NonPositiveC2(f64),
    #[error("pi must lie in (0, 1), got {0}")]
    BadPi(f64),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix dimension {0} exceeds the dense eigen-solve guard {MIN_EIG_DIM_GUARD}")]
    DimensionGuard(usize),
    #[error("escape start point classifies as {0:?}, expected a strict saddle (H)")]
    StartNotStrictSaddle(Region),
    #[error("epsilon_drop must be positive, got {0}")]
    BadEpsilonDrop(f64),
    #[error("scaling fit needs at least 3 network sizes, got {0}")]
    TooFewPoints(usize),
    #[error("scaling fit rejects censored medians (K = {0})")]
    CensoredInput(usize),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Region of the space decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Large gradient.
    G,
    /// Approximately stationary with `lambda_min(Hessian) <= -tau`.
    H,
    /// Second-order stationary.
    M,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::G => "G",
            Region::H => "H",
            Region::M => "M",
        }
    }
}

/// Classification outcome with the measured quantities. The Hessian
/// eigen-solve is skipped when the gradient test already decides `G`, so
/// `min_curvature` is `None` there.
#[derive(Debug, Clone)]
pub struct RegionLabel {
    pub region: Region,
    pub grad_norm_sq: f64,
    pub min_curvature: Option<f64>,
}

/// Classifier constants; construction enforces `mu' delta < 1/2`, positive
/// noise, and the parameter ranges.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub mu_effective: f64,
    pub delta: f64,
    pub pi: f64,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ClassifierParams {
    pub fn new(
        mu_effective: f64,
        delta: f64,
        pi: f64,
        tau: f64,
        p: &DVector<f64>,
        noise: &NoiseProfile,
    ) -> Result<Self, StationarityError> {
        if !(0.0 < pi && pi < 1.0) {
            return Err(StationarityError::BadPi(pi));
        }
        if tau <= 0.0 {
            return Err(StationarityError::BadTau(tau));
        }
        let c1 = 0.5 * (1.0 - 2.0 * mu_effective * delta);
        if c1 <= 0.0 {
            return Err(StationarityError::NonPositiveC1(c1));
        }
        let c2 = 0.5 * delta * crate::topology::policy_objective(p, noise)?;
        if c2 <= 0.0 {
            return Err(StationarityError::NonPositiveC2(c2));
        }
        Ok(ClassifierParams {
            mu_effective,
            delta,
            pi,
            tau,
            c1,
            c2,
        })
    }

    /// Gradient-norm-squared threshold separating `G` from its complement:
    /// `mu' (c2/c1)(1 + 1/pi)`.
    pub fn grad_threshold(&self) -> f64 {
        self.mu_effective * (self.c2 / self.c1) * (1.0 + 1.0 / self.pi)
    }
}

/// Smallest eigenvalue of a symmetric matrix via a dense symmetric
/// eigen-solver.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> Result<f64, StationarityError> {
    let dim = h.nrows();
    if dim > MIN_EIG_DIM_GUARD {
        return Err(StationarityError::DimensionGuard(dim));
    }
    let scale = h.amax().max(1.0);
    let asymmetry = (h - h.transpose()).amax();
    if asymmetry > 1e-8 * scale {
        return Err(StationarityError::NotSymmetric(asymmetry));
    }
    let symmetrized = 0.5 * (h + h.transpose());
    let eigen = nalgebra::SymmetricEigen::new(symmetrized);
    Ok(eigen
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &l| acc.min(l)))
}

/// Classifies `w`: `G` when the squared gradient norm reaches the threshold,
/// otherwise `H`/`M` by the sign of `lambda_min(Hessian) + tau`.
pub fn classify(
    w: &DVector<f64>,
    model: &(impl LossModel + ?Sized),
    params: &ClassifierParams,
) -> Result<RegionLabel, StationarityError> {
    let (_, gradient) = crate::landscape::eval_loss(model, w)?;
    let grad_norm_sq = gradient.norm_squared();
    if grad_norm_sq >= params.grad_threshold() {
        return Ok(RegionLabel {
            region: Region::G,
            grad_norm_sq,
            min_curvature: None,
        });
    }
    let hessian = crate::landscape::eval_hessian(model, w)?;
    let min_curvature = min_eigenvalue(&hessian)?;
    let region = if min_curvature <= -params.tau {
        Region::H
    } else {
        Region::M
    };
    Ok(RegionLabel {
        region,
        grad_norm_sq,
        min_curvature: Some(min_curvature),
    })
}

// ---------------------------------------------------------------------------
// Escape-time measurement
// ---------------------------------------------------------------------------

/// One seed's escape outcome. Censored runs carry `iterations = max_iters`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeOutcome {
    pub seed: u64,
    pub iterations: usize,
    pub censored: bool,
}

/// Per-seed escape times with their median and interquartile range.
#[derive(Debug, Clone)]
pub struct EscapeStats {
    pub outcomes: Vec<EscapeOutcome>,
    pub median: f64,
    pub quartile_low: f64,
    pub quartile_high: f64,
    pub censored_count: usize,
}

impl EscapeStats {
    pub fn iqr(&self) -> f64 {
        self.quartile_high - self.quartile_low
    }

    pub fn all_censored(&self) -> bool {
        self.censored_count == self.outcomes.len()
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let position = q * (sorted.len() - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    let fraction = position - lower as f64;
    sorted[lower] + fraction * (sorted[upper] - sorted[lower])
}

fn summarize(outcomes: Vec<EscapeOutcome>) -> EscapeStats {
    let mut times: Vec<f64> = outcomes.iter().map(|o| o.iterations as f64).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let censored_count = outcomes.iter().filter(|o| o.censored).count();
    EscapeStats {
        median: quantile(&times, 0.5),
        quartile_low: quantile(&times, 0.25),
        quartile_high: quantile(&times, 0.75),
        censored_count,
        outcomes,
    }
}

/// Default escape threshold: 5% of the gap to the known minimum when
/// available (and non-degenerate), else an absolute drop of 0.01.
pub fn default_epsilon_drop(model: &(impl LossModel + ?Sized), saddle_value: f64) -> f64 {
    match model.known_minimum() {
        Some(minimum) if (saddle_value - minimum).abs() > 1e-12 => {
            0.05 * (saddle_value - minimum).abs()
        }
        _ => 0.01,
    }
}

/// Runs diffusion from an exact saddle start for every seed and records the
/// first iteration where the centroid's loss drops `epsilon_drop` below the
/// saddle value. Seeds run independently (in parallel) and are reported in
/// input order; runs that never escape are censored at `max_iters`.
pub fn measure_escape(
    oracle: &StochasticOracle,
    policy: &CombinationPolicy,
    step: &StepConfig,
    saddle: &DVector<f64>,
    epsilon_drop: f64,
    max_iters: usize,
    seeds: &[u64],
    params: &ClassifierParams,
) -> Result<EscapeStats, StationarityError> {
    if epsilon_drop <= 0.0 {
        return Err(StationarityError::BadEpsilonDrop(epsilon_drop));
    }
    let label = classify(saddle, oracle.loss(), params)?;
    if label.region != Region::H {
        return Err(StationarityError::StartNotStrictSaddle(label.region));
    }
    let saddle_value = oracle.loss().value(saddle);
    let threshold = saddle_value - epsilon_drop;

    let outcomes: Result<Vec<EscapeOutcome>, StationarityError> = seeds
        .par_iter()
        .map(|&seed| {
            let seeded = oracle.with_seed(seed);
            let mut state = NetworkState::replicated(policy.agents(), saddle);
            for i in 1..=max_iters {
                state = engine::diffusion_step(&state, &seeded, policy, step)?;
                let centroid = state.centroid(policy.perron())?;
                if seeded.loss().value(&centroid) <= threshold {
                    return Ok(EscapeOutcome {
                        seed,
                        iterations: i,
                        censored: false,
                    });
                }
            }
            Ok(EscapeOutcome {
                seed,
                iterations: max_iters,
                censored: true,
            })
        })
        .collect();
    Ok(summarize(outcomes?))
}

/// Least-squares slope and intercept of `log(median time)` against `log K`.
pub fn escape_scaling_fit(points: &[(usize, EscapeStats)]) -> Result<(f64, f64), StationarityError> {
    if points.len() < 3 {
        return Err(StationarityError::TooFewPoints(points.len()));
    }
    for (k, stats) in points {
        if stats.censored_count > 0 {
            return Err(StationarityError::CensoredInput(*k));
        }
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|(k, stats)| ((*k as f64).ln(), stats.median.ln()))
        .collect();
    Ok(least_squares(&xy))
}

/// Plain least squares on (x, y) pairs; returns (slope, intercept).
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(x, y) in points {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    let slope = if var > 0.0 { cov / var } else { 0.0 };
    (slope, mean_y - slope * mean_x)
}
