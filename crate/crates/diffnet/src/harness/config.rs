//! Experiment configuration: one JSON document is the source of truth; CLI
//! flags override individual fields before anything is built. The SHA-256
//! hash of the merged config is stamped into every output file header so
//! replays against a different config are detectable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::engine::StepConfig;
use crate::landscape::{DiagQuadratic, LossModel, NNSaddleLoss, Smoothness, StochasticOracle};
use crate::stationarity::ClassifierParams;
use crate::topology::{
    build_graph, read_noise_profile, read_policy_csv, uniform_policy, CombinationPolicy, Graph,
    NoiseProfile, TopologyKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `1/2 Σ d_j w_j²`.
    Quadratic { diag: Vec<f64> },
    /// Single-layer network with a strict saddle at the origin.
    NnSaddle {
        features: usize,
        #[serde(default = "default_reg")]
        reg: f64,
        #[serde(default = "default_shift")]
        shift: f64,
    },
}

fn default_reg() -> f64 {
    0.01
}

fn default_shift() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Uniform,
    Mh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Named(PolicyName),
    File { file: PathBuf },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Named(PolicyName::Uniform) => "uniform".into(),
            PolicySpec::Named(PolicyName::Mh) => "mh".into(),
            PolicySpec::File { file } => file.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrPerAgent {
    Scalar(f64),
    PerAgent(Vec<f64>),
}

impl ScalarOrPerAgent {
    fn resolve(&self, agents: usize) -> Result<Vec<f64>, HarnessError> {
        match self {
            ScalarOrPerAgent::Scalar(value) => Ok(vec![*value; agents]),
            ScalarOrPerAgent::PerAgent(values) => {
                if values.len() != agents {
                    return Err(HarnessError::Config(format!(
                        "sigma_iso lists {} agents, config asks for {agents}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Gradient-noise mechanism plus the declared constants. When no declared
/// profile is given it is derived from the isotropic stds (`σ_k² = dim·σ_iso²`,
/// floor `σ_iso²`); a fully noiseless mechanism falls back to nominal (1, 1)
/// constants, which only scale the normalizer and classifier thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_sigma_iso")]
    pub sigma_iso: ScalarOrPerAgent,
    #[serde(default = "default_true")]
    pub data_sampling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<NoiseProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_file: Option<PathBuf>,
}

fn default_sigma_iso() -> ScalarOrPerAgent {
    ScalarOrPerAgent::Scalar(0.1)
}

fn default_true() -> bool {
    true
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_iso: default_sigma_iso(),
            data_sampling: true,
            declared: None,
            declared_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_pi")]
    pub pi: f64,
    /// Loss drop below the start value that counts as an escape; `None`
    /// selects 5% of the gap to a known minimum, else 0.01.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_drop: Option<f64>,
    /// Gradient-Lipschitz constant override; `None` uses the loss's exact or
    /// estimated constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

fn default_tau() -> f64 {
    0.01
}

fn default_pi() -> f64 {
    0.5
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            tau: default_tau(),
            pi: default_pi(),
            epsilon_drop: None,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default = "default_seed_base")]
    pub base: u64,
    #[serde(default = "default_seed_count")]
    pub count: usize,
}

fn default_seed_base() -> u64 {
    1
}

fn default_seed_count() -> usize {
    20
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec {
            base: default_seed_base(),
            count: default_seed_count(),
        }
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    #[serde(default = "default_topology")]
    pub topology: TopologyKind,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    /// Network sizes; single runs use the first entry, sweeps all of them.
    #[serde(default = "default_agents")]
    pub agents: Vec<usize>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    #[serde(default)]
    pub seeds: SeedSpec,
    /// Iterations for a single run.
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Escape horizon; runs that never escape are censored here.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_cadence")]
    pub record_cadence: usize,
    #[serde(default)]
    pub record_gradients: bool,
    /// Also run the centralized baselines next to the diffusion run.
    #[serde(default)]
    pub baselines: bool,
    /// Initial point for runs and the saddle start for sweeps; the origin
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_loss() -> LossSpec {
    LossSpec::Quadratic {
        diag: vec![1.0, 1.0],
    }
}

fn default_topology() -> TopologyKind {
    TopologyKind::Complete
}

fn default_policy() -> PolicySpec {
    PolicySpec::Named(PolicyName::Uniform)
}

fn default_agents() -> Vec<usize> {
    vec![4]
}

fn default_mu() -> f64 {
    0.01
}

fn default_iters() -> usize {
    1_000
}

fn default_max_iters() -> usize {
    200_000
}

fn default_cadence() -> usize {
    10
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            HarnessError::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.agents.is_empty() {
            return Err(HarnessError::Config("agents list is empty".into()));
        }
        if self.agents.contains(&0) {
            return Err(HarnessError::Config("agent counts must be positive".into()));
        }
        if self.mu <= 0.0 || !self.mu.is_finite() {
            return Err(HarnessError::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.seeds.count == 0 {
            return Err(HarnessError::Config("seed count must be positive".into()));
        }
        if self.record_cadence == 0 {
            return Err(HarnessError::Config("record_cadence must be positive".into()));
        }
        if let Some(eps) = self.classifier.epsilon_drop {
            if eps <= 0.0 {
                return Err(HarnessError::Config(format!(
                    "epsilon_drop must be positive, got {eps}"
                )));
            }
        }
        if let PolicySpec::File { file } = &self.policy {
            if !file.exists() {
                return Err(HarnessError::Config(format!(
                    "policy file {} does not exist",
                    file.display()
                )));
            }
        }
        if let Some(file) = &self.noise.declared_file {
            if !file.exists() {
                return Err(HarnessError::Config(format!(
                    "declared noise file {} does not exist",
                    file.display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, truncated to 16 hex chars.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_loss(&self) -> Arc<dyn LossModel> {
        match &self.loss {
            LossSpec::Quadratic { diag } => Arc::new(DiagQuadratic::new(diag.clone())),
            LossSpec::NnSaddle {
                features,
                reg,
                shift,
            } => Arc::new(NNSaddleLoss::new(*features, *reg, *shift)),
        }
    }
}

/// Everything a command needs for one network size, built once from the
/// config.
pub struct ExperimentBundle {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub agents: usize,
    pub graph: Graph,
    pub policy: CombinationPolicy,
    pub loss: Arc<dyn LossModel>,
    pub smoothness: Smoothness,
    pub declared_noise: NoiseProfile,
    pub oracle: StochasticOracle,
    pub step: StepConfig,
    pub init: DVector<f64>,
    pub epsilon_drop: f64,
}

impl ExperimentBundle {
    /// Classifier constants for this bundle; fails when `mu' * delta >= 1/2`.
    pub fn classifier(&self) -> Result<ClassifierParams, crate::stationarity::StationarityError> {
        let delta = self
            .config
            .classifier
            .delta
            .unwrap_or(self.smoothness.grad_lipschitz);
        ClassifierParams::new(
            self.step.mu_effective,
            delta,
            self.config.classifier.pi,
            self.config.classifier.tau,
            self.policy.perron(),
            &self.declared_noise,
        )
    }
}

/// Builds the policy named by the spec on the given graph.
pub fn build_policy(
    spec: &PolicySpec,
    graph: &Graph,
    noise: &NoiseProfile,
) -> Result<CombinationPolicy, HarnessError> {
    match spec {
        PolicySpec::Named(PolicyName::Uniform) => Ok(uniform_policy(graph)?),
        PolicySpec::Named(PolicyName::Mh) => {
            Ok(crate::topology::asymmetric_mh_policy(graph, noise)?)
        }
        PolicySpec::File { file } => {
            let matrix = read_policy_csv(file)?;
            let report = crate::topology::validate_policy(&matrix, graph)?;
            if !report.passed() {
                return Err(HarnessError::Config(format!(
                    "policy file {} fails validation:\n{report}",
                    file.display()
                )));
            }
            Ok(CombinationPolicy::from_matrix(matrix, graph.clone())?)
        }
    }
}

/// Builds the full bundle for one network size.
pub fn build_bundle(config: &ExperimentConfig, agents: usize) -> Result<ExperimentBundle, HarnessError> {
    config.validate()?;
    let graph = build_graph(&config.topology, agents)?;
    let loss = config.build_loss();
    let dim = loss.dim();

    let sigma_iso = config.noise.sigma_iso.resolve(agents)?;
    let declared_noise = if let Some(file) = &config.noise.declared_file {
        read_noise_profile(file)?
    } else if let Some(profile) = &config.noise.declared {
        profile.clone()
    } else if sigma_iso.iter().all(|&s| s > 0.0) {
        NoiseProfile::from_isotropic(&sigma_iso, dim)?
    } else {
        NoiseProfile::uniform(agents, 1.0, 1.0)?
    };
    if declared_noise.agents() != agents {
        return Err(HarnessError::Config(format!(
            "declared noise profile lists {} agents, config asks for {agents}",
            declared_noise.agents()
        )));
    }

    let policy = build_policy(&config.policy, &graph, &declared_noise)?;
    let smoothness = loss.smoothness();
    let oracle = StochasticOracle::new(
        Arc::clone(&loss),
        declared_noise.clone(),
        sigma_iso,
        config.noise.data_sampling,
        config.seeds.base,
    )?;
    let step = StepConfig::new(
        config.mu,
        config.normalize,
        policy.perron(),
        &declared_noise,
    )?;

    let init = match &config.init {
        Some(values) => {
            if values.len() != dim {
                return Err(HarnessError::Config(format!(
                    "init has dimension {}, loss expects {dim}",
                    values.len()
                )));
            }
            DVector::from_vec(values.clone())
        }
        None => DVector::zeros(dim),
    };
    let epsilon_drop = config.classifier.epsilon_drop.unwrap_or_else(|| {
        crate::stationarity::default_epsilon_drop(loss.as_ref(), loss.value(&init))
    });

    Ok(ExperimentBundle {
        config: config.clone(),
        config_hash: config.hash(),
        agents,
        graph,
        policy,
        loss,
        smoothness,
        declared_noise,
        oracle,
        step,
        init,
        epsilon_drop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_builds() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        let bundle = build_bundle(&config, 4).unwrap();
        assert_eq!(bundle.agents, 4);
        assert_eq!(bundle.loss.dim(), 2);
        assert!(bundle.classifier().is_ok());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let config = ExperimentConfig::default();
        let base = config.hash();
        assert_eq!(base.len(), 16);
        assert_eq!(base, ExperimentConfig::default().hash());
        let mut changed = ExperimentConfig::default();
        changed.mu = 0.02;
        assert_ne!(base, changed.hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{"loss": {"kind": "nn_saddle", "features": 2}, "agents": [1, 2, 4]}"#,
        )
        .unwrap();
        assert_eq!(config.agents, vec![1, 2, 4]);
        match config.loss {
            LossSpec::NnSaddle { features, reg, shift } => {
                assert_eq!(features, 2);
                assert_eq!(reg, 0.01);
                assert_eq!(shift, 0.5);
            }
            other => panic!("unexpected loss {other:?}"),
        }
        assert_eq!(config.mu, 0.01);
    }

    #[test]
    fn unknown_fields_rejected() {
        let result: Result<ExperimentConfig, _> = serde_json::from_str(r#"{"mysterious": 1}"#);
        assert!(result.is_err());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut config = ExperimentConfig::default();
        config.agents = vec![];
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.mu = -1.0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.record_cadence = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn policy_spec_round_trips() {
        for (json, expected) in [
            (r#""uniform""#, PolicySpec::Named(PolicyName::Uniform)),
            (r#""mh""#, PolicySpec::Named(PolicyName::Mh)),
            (
                r#"{"file": "a.csv"}"#,
                PolicySpec::File {
                    file: PathBuf::from("a.csv"),
                },
            ),
        ] {
            let parsed: PolicySpec = serde_json::from_str(json).unwrap();
            assert_eq!(parsed, expected);
        }
    }

    #[test]
    fn zero_sigma_iso_gets_nominal_declared_profile() {
        let mut config = ExperimentConfig::default();
        config.noise.sigma_iso = ScalarOrPerAgent::Scalar(0.0);
        let bundle = build_bundle(&config, 2).unwrap();
        assert_eq!(bundle.declared_noise.sigma_sq, vec![1.0, 1.0]);
    }

    #[test]
    fn heterogeneous_sigma_iso_resolves_per_agent() {
        let mut config = ExperimentConfig::default();
        config.noise.sigma_iso = ScalarOrPerAgent::PerAgent(vec![0.1, 0.2]);
        let bundle = build_bundle(&config, 2).unwrap();
        // Declared σ² = dim σ_iso² with dim = 2.
        assert!((bundle.declared_noise.sigma_sq[0] - 0.02).abs() <= 1e-15);
        assert!((bundle.declared_noise.sigma_sq[1] - 0.08).abs() <= 1e-15);
        assert!(build_bundle(&config, 3).is_err());
    }

    #[test]
    fn seeds_are_distinct_and_ordered() {
        let spec = SeedSpec { base: 5, count: 4 };
        assert_eq!(spec.seeds(), vec![5, 6, 7, 8]);
    }
}
