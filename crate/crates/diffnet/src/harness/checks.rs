//! Cross-module verification experiments shared by `diffnet check` and the
//! acceptance suite: aggregated-noise moments, steady-state disagreement
//! scaling in the step size, and one-step descent from the large-gradient
//! region.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::engine::{self, NetworkState, StepConfig};
use crate::landscape::{DiagQuadratic, StochasticOracle};
use crate::stationarity::least_squares;
use crate::topology::{build_graph, uniform_policy, NoiseProfile, TopologyKind};

use super::HarnessError;

/// Monte-Carlo second moment of the aggregated noise `Σ_k p_k s_k` at a fixed
/// point, with its standard error.
pub fn aggregated_noise_second_moment(
    oracle: &StochasticOracle,
    p: &DVector<f64>,
    w: &DVector<f64>,
    draws: usize,
) -> Result<(f64, f64), HarnessError> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..draws {
        let mut aggregated = DVector::zeros(oracle.dim());
        for agent in 0..oracle.agents() {
            aggregated += p[agent] * oracle.sample_noise(agent, w, i)?;
        }
        let norm_sq = aggregated.norm_squared();
        sum += norm_sq;
        sum_sq += norm_sq * norm_sq;
    }
    let n = draws as f64;
    let mean = sum / n;
    let variance = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (variance / n).sqrt()))
}

/// Eigenvalue range of the empirical aggregated-noise covariance, with the
/// standard errors of the variance estimates along the extreme
/// eigendirections.
pub struct CovarianceRange {
    pub min_eig: f64,
    pub max_eig: f64,
    pub min_se: f64,
    pub max_se: f64,
}

pub fn aggregated_noise_covariance_range(
    oracle: &StochasticOracle,
    p: &DVector<f64>,
    w: &DVector<f64>,
    draws: usize,
) -> Result<CovarianceRange, HarnessError> {
    let dim = oracle.dim();
    let mut samples = Vec::with_capacity(draws);
    let mut mean = DVector::zeros(dim);
    for i in 0..draws {
        let mut aggregated = DVector::zeros(dim);
        for agent in 0..oracle.agents() {
            aggregated += p[agent] * oracle.sample_noise(agent, w, i)?;
        }
        mean += &aggregated;
        samples.push(aggregated);
    }
    let n = draws as f64;
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in &samples {
        let centered = s - &mean;
        cov += &centered * centered.transpose();
    }
    cov /= n;
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut min_index = 0;
    let mut max_index = 0;
    for i in 0..dim {
        if eigen.eigenvalues[i] < eigen.eigenvalues[min_index] {
            min_index = i;
        }
        if eigen.eigenvalues[i] > eigen.eigenvalues[max_index] {
            max_index = i;
        }
    }
    let se_along = |index: usize| -> f64 {
        let direction = eigen.eigenvectors.column(index);
        let projected: Vec<f64> = samples
            .iter()
            .map(|s| {
                let x = direction.dot(&(s - &mean));
                x * x
            })
            .collect();
        let m = projected.iter().sum::<f64>() / n;
        let var = projected.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (var / n).sqrt()
    };
    Ok(CovarianceRange {
        min_eig: eigen.eigenvalues[min_index],
        max_eig: eigen.eigenvalues[max_index],
        min_se: se_along(min_index),
        max_se: se_along(max_index),
    })
}

/// Steady-state mean fourth-order disagreement per step size, on a stable
/// quadratic with isotropic noise over a ring (nonzero mixing rate so the
/// agents genuinely disagree).
pub struct DisagreementScaling {
    /// (mu, mean disagreement4) per step size.
    pub points: Vec<(f64, f64)>,
    /// Log-log slope in mu.
    pub slope: f64,
}

pub fn disagreement_scaling_experiment(
    mu_values: &[f64],
    agents: usize,
    sigma_iso: f64,
    samples_per_mu: usize,
    seed: u64,
) -> Result<DisagreementScaling, HarnessError> {
    let graph = build_graph(&TopologyKind::Ring, agents)?;
    let policy = uniform_policy(&graph)?;
    let dim = 2;
    let oracle = StochasticOracle::new(
        Arc::new(DiagQuadratic::isotropic(dim)),
        NoiseProfile::from_isotropic(&vec![sigma_iso; agents], dim)?,
        vec![sigma_iso; agents],
        true,
        seed,
    )?;
    let mut points = Vec::with_capacity(mu_values.len());
    for &mu in mu_values {
        let step = StepConfig::raw(mu).map_err(crate::engine::EngineError::from)?;
        let burn = engine::burn_in_iterations(mu, policy.lambda2());
        let mut state = NetworkState::replicated(agents, &DVector::zeros(dim));
        for _ in 0..burn {
            state = engine::diffusion_step(&state, &oracle, &policy, &step)?;
        }
        let mut total = 0.0;
        for _ in 0..samples_per_mu {
            state = engine::diffusion_step(&state, &oracle, &policy, &step)?;
            total += engine::disagreement4(&state, policy.perron())?;
        }
        points.push((mu, total / samples_per_mu as f64));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(mu, d)| (mu.ln(), d.ln())).collect();
    let (slope, _) = least_squares(&logs);
    Ok(DisagreementScaling { points, slope })
}

/// Mean one-step change of the centroid loss across seeds, starting every
/// agent at `start`.
pub fn one_step_descent_experiment(
    oracle: &StochasticOracle,
    policy: &crate::topology::CombinationPolicy,
    step: &StepConfig,
    start: &DVector<f64>,
    seeds: usize,
) -> Result<f64, HarnessError> {
    let loss = oracle.loss_arc();
    let j_start = loss.value(start);
    let mut total = 0.0;
    for seed in 0..seeds as u64 {
        let seeded = oracle.with_seed(0xdead_0000 + seed);
        let state = NetworkState::replicated(policy.agents(), start);
        let next = engine::diffusion_step(&state, &seeded, policy, step)?;
        let centroid = next.centroid(policy.perron())?;
        total += loss.value(&centroid) - j_start;
    }
    Ok(total / seeds as f64)
}
