//! The diffusion recursion and its centralized baselines.
//!
//! One synchronous round is adapt-then-combine: every agent takes a local
//! stochastic-gradient step (`phi_k = w_k - mu' * g_k`), then mixes neighbor
//! intermediates with its combination-matrix column (`w_k⁺ = Σ_l a_lk phi_l`).
//! Because `Ap = p`, the `p`-weighted centroid of the network follows the
//! centralized recursion driven by the aggregated gradient `Σ_k p_k g_k`
//! exactly; `centroid_recursion_check` verifies that identity on recorded
//! trajectories.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::landscape::{LandscapeError, StochasticOracle};
use crate::topology::{CombinationPolicy, NoiseProfile, TopologyError};

/// Divergence guard: abort when any iterate entry exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("iterate of agent {agent} diverged at iteration {iteration} (entry {value:.3e})")]
    Diverged {
        agent: usize,
        iteration: usize,
        value: f64,
    },
    #[error("state has {got} agents, expected {expected}")]
    AgentCountMismatch { got: usize, expected: usize },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("step-size normalizer Σ p_k² σ_k² = {0}; must be positive")]
    ZeroNormalizer(f64),
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("trajectory was recorded without per-step gradients")]
    MissingGradients,
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

// ---------------------------------------------------------------------------
// State and step configuration
// ---------------------------------------------------------------------------

/// Stacked per-agent iterates at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub iterates: Vec<DVector<f64>>,
    pub iteration: usize,
}

impl NetworkState {
    /// All agents initialized at the same point.
    pub fn replicated(agents: usize, w0: &DVector<f64>) -> Self {
        NetworkState {
            iterates: vec![w0.clone(); agents],
            iteration: 0,
        }
    }

    pub fn agents(&self) -> usize {
        self.iterates.len()
    }

    /// `p`-weighted centroid of the iterates, recomputed on demand.
    pub fn centroid(&self, p: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
        centroid(&self.iterates, p)
    }
}

/// Base step size plus the effective step after optional normalization by
/// `Σ p_k² σ_k²`, which makes limiting accuracy comparable across network
/// sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub mu: f64,
    pub normalized: bool,
    pub mu_effective: f64,
}

impl StepConfig {
    pub fn new(
        mu: f64,
        normalized: bool,
        p: &DVector<f64>,
        noise: &NoiseProfile,
    ) -> Result<Self, EngineError> {
        if mu <= 0.0 || !mu.is_finite() {
            return Err(EngineError::NonPositiveStep(mu));
        }
        let mu_effective = if normalized {
            normalize_step(mu, p, noise)?
        } else {
            mu
        };
        Ok(StepConfig {
            mu,
            normalized,
            mu_effective,
        })
    }

    /// Unnormalized step.
    pub fn raw(mu: f64) -> Result<Self, EngineError> {
        if mu <= 0.0 || !mu.is_finite() {
            return Err(EngineError::NonPositiveStep(mu));
        }
        Ok(StepConfig {
            mu,
            normalized: false,
            mu_effective: mu,
        })
    }
}

/// `mu / Σ_k p_k² σ_k²`.
pub fn normalize_step(mu: f64, p: &DVector<f64>, noise: &NoiseProfile) -> Result<f64, EngineError> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(EngineError::NonPositiveStep(mu));
    }
    let normalizer = crate::topology::policy_objective(p, noise)?;
    if normalizer <= 0.0 || !normalizer.is_finite() {
        return Err(EngineError::ZeroNormalizer(normalizer));
    }
    Ok(mu / normalizer)
}

// ---------------------------------------------------------------------------
// Recursions
// ---------------------------------------------------------------------------

fn guard_finite(w: &DVector<f64>, agent: usize, iteration: usize) -> Result<(), EngineError> {
    for &x in w.iter() {
        if !x.is_finite() || x.abs() > DIVERGENCE_LIMIT {
            return Err(EngineError::Diverged {
                agent,
                iteration,
                value: x,
            });
        }
    }
    Ok(())
}

/// One adapt-then-combine round; also returns the per-agent sampled gradients
/// so centroid bookkeeping can be verified without re-simulation.
pub fn diffusion_step_recorded(
    state: &NetworkState,
    oracle: &StochasticOracle,
    policy: &CombinationPolicy,
    step: &StepConfig,
) -> Result<(NetworkState, Vec<DVector<f64>>), EngineError> {
    let agents = policy.agents();
    if state.agents() != agents {
        return Err(EngineError::AgentCountMismatch {
            got: state.agents(),
            expected: agents,
        });
    }
    let iteration = state.iteration;

    // Adapt: local stochastic-gradient steps.
    let mut gradients = Vec::with_capacity(agents);
    let mut intermediates = Vec::with_capacity(agents);
    for agent in 0..agents {
        let gradient = oracle.sample_gradient(agent, &state.iterates[agent], iteration)?;
        intermediates.push(&state.iterates[agent] - step.mu_effective * &gradient);
        gradients.push(gradient);
    }

    // Combine: column k of the combination matrix weights the neighborhood.
    let graph = policy.graph();
    let mut next = Vec::with_capacity(agents);
    for agent in 0..agents {
        let mut mixed = DVector::zeros(oracle.dim());
        for &neighbor in graph.neighbors(agent) {
            mixed += policy.weight(neighbor, agent) * &intermediates[neighbor];
        }
        guard_finite(&mixed, agent, iteration + 1)?;
        next.push(mixed);
    }
    Ok((
        NetworkState {
            iterates: next,
            iteration: iteration + 1,
        },
        gradients,
    ))
}

/// One adapt-then-combine round.
pub fn diffusion_step(
    state: &NetworkState,
    oracle: &StochasticOracle,
    policy: &CombinationPolicy,
    step: &StepConfig,
) -> Result<NetworkState, EngineError> {
    diffusion_step_recorded(state, oracle, policy, step).map(|(next, _)| next)
}

/// Centralized baseline using all K stochastic gradients per iteration:
/// `w⁺ = w - mu' Σ_k p_k g_k(w)`.
pub fn centralized_full_step(
    w: &DVector<f64>,
    oracle: &StochasticOracle,
    p: &DVector<f64>,
    step: &StepConfig,
    iteration: usize,
) -> Result<DVector<f64>, EngineError> {
    if p.len() != oracle.agents() {
        return Err(EngineError::LengthMismatch(p.len(), oracle.agents()));
    }
    let mut update = DVector::zeros(w.len());
    for agent in 0..oracle.agents() {
        update += p[agent] * oracle.sample_gradient(agent, w, iteration)?;
    }
    let next = w - step.mu_effective * update;
    guard_finite(&next, 0, iteration + 1)?;
    Ok(next)
}

/// Centralized baseline evaluating a single stochastic gradient per
/// iteration at an agent drawn with probability `p_k`.
pub fn centralized_sampled_step(
    w: &DVector<f64>,
    oracle: &StochasticOracle,
    p: &DVector<f64>,
    step: &StepConfig,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>, EngineError> {
    if p.len() != oracle.agents() {
        return Err(EngineError::LengthMismatch(p.len(), oracle.agents()));
    }
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut chosen = p.len() - 1;
    for (agent, &weight) in p.iter().enumerate() {
        cumulative += weight;
        if draw < cumulative {
            chosen = agent;
            break;
        }
    }
    let gradient = oracle.sample_gradient(chosen, w, iteration)?;
    let next = w - step.mu_effective * gradient;
    guard_finite(&next, chosen, iteration + 1)?;
    Ok(next)
}

// ---------------------------------------------------------------------------
// Centroid bookkeeping and disagreement
// ---------------------------------------------------------------------------

/// `Σ_k p_k w_k`.
pub fn centroid(iterates: &[DVector<f64>], p: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
    if iterates.len() != p.len() {
        return Err(EngineError::LengthMismatch(iterates.len(), p.len()));
    }
    let dim = iterates[0].len();
    let mut c = DVector::zeros(dim);
    for (w, &weight) in iterates.iter().zip(p.iter()) {
        if w.len() != dim {
            return Err(EngineError::LengthMismatch(w.len(), dim));
        }
        c += weight * w;
    }
    Ok(c)
}

/// Fourth power of the stacked deviation norm from the centroid:
/// `(Σ_k ||w_k - w_c||²)²`.
pub fn disagreement4(state: &NetworkState, p: &DVector<f64>) -> Result<f64, EngineError> {
    let c = state.centroid(p)?;
    let sum_sq: f64 = state.iterates.iter().map(|w| (w - &c).norm_squared()).sum();
    Ok(sum_sq * sum_sq)
}

/// A short recorded run: every state, plus the sampled gradients per step
/// when requested.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<NetworkState>,
    pub gradients: Option<Vec<Vec<DVector<f64>>>>,
    pub mu_effective: f64,
}

/// Runs `iters` diffusion rounds from `w0`, recording every state.
pub fn run_diffusion(
    oracle: &StochasticOracle,
    policy: &CombinationPolicy,
    step: &StepConfig,
    w0: &DVector<f64>,
    iters: usize,
    record_gradients: bool,
) -> Result<Trajectory, EngineError> {
    let mut states = Vec::with_capacity(iters + 1);
    let mut gradients = record_gradients.then(|| Vec::with_capacity(iters));
    states.push(NetworkState::replicated(policy.agents(), w0));
    for _ in 0..iters {
        let (next, grads) =
            diffusion_step_recorded(states.last().expect("non-empty"), oracle, policy, step)?;
        if let Some(log) = gradients.as_mut() {
            log.push(grads);
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        gradients,
        mu_effective: step.mu_effective,
    })
}

/// Verifies `w_c(i) = w_c(i-1) - mu' Σ_k p_k g_k(i)` at every recorded step;
/// returns the largest ∞-norm deviation. Exact algebra given `Ap = p`.
pub fn centroid_recursion_check(
    trajectory: &Trajectory,
    p: &DVector<f64>,
) -> Result<f64, EngineError> {
    let gradients = trajectory
        .gradients
        .as_ref()
        .ok_or(EngineError::MissingGradients)?;
    let mut worst = 0.0f64;
    for (i, grads) in gradients.iter().enumerate() {
        let previous = trajectory.states[i].centroid(p)?;
        let aggregated = centroid(grads, p)?;
        let expected = previous - trajectory.mu_effective * aggregated;
        let actual = trajectory.states[i + 1].centroid(p)?;
        worst = worst.max((actual - expected).amax());
    }
    Ok(worst)
}

/// Burn-in horizon for steady-state disagreement measurements:
/// `ceil(4 ln(1/mu) / ln(1/lambda2))`, at least 1, capped at 1e5.
pub fn burn_in_iterations(mu: f64, lambda2: f64) -> usize {
    const CAP: usize = 100_000;
    if !(0.0..1.0).contains(&lambda2) || lambda2 <= 1e-12 || mu >= 1.0 {
        return 1;
    }
    let raw = (4.0 * (1.0 / mu).ln() / (1.0 / lambda2).ln()).ceil();
    (raw.max(1.0) as usize).min(CAP)
}
