//! Graphs, combination policies and their spectral analysis.
//!
//! A combination policy is a left-stochastic matrix `A` on the sparsity
//! pattern of a connected graph with self-loops: entry `(l, k)` holds the
//! weight `a_lk` that agent `k` applies to neighbor `l`'s intermediate, and
//! every column sums to one. On a strongly connected graph such a matrix has
//! a single eigenvalue at one with a positive eigenvector `p` (`Ap = p`,
//! `1ᵀp = 1`), and the magnitude of the second-largest eigenvalue — the
//! mixing rate — governs how fast the agents cluster around the `p`-weighted
//! centroid.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Tolerance for the Perron fixed-point residual enforced on every policy.
pub const PERRON_RESIDUAL_TOL: f64 = 1e-10;
/// Power-iteration stopping tolerance.
const POWER_TOL: f64 = 1e-12;
/// Power-iteration cap; adequate for K up to ~10^3.
const POWER_CAP: usize = 100_000;
/// Retry cap when drawing random graphs until connected.
const RANDOM_GRAPH_RETRIES: usize = 100;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("agent count must be at least 1")]
    EmptyGraph,
    #[error("grid sides {sides:?} do not multiply to the agent count {agents}")]
    BadGridDimensions { sides: Vec<usize>, agents: usize },
    #[error("random graph still disconnected after {0} retries")]
    DisconnectedAfterRetries(usize),
    #[error("adjacency is not symmetric: {0} lists {1} but not vice versa")]
    AsymmetricAdjacency(usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("agent {0} is missing its self-loop")]
    MissingSelfLoop(usize),
    #[error("matrix is {rows}x{cols}, expected {expected}x{expected}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("policy violates the combination constraints:\n{0}")]
    InvalidPolicy(PolicyReport),
    #[error(
        "power iteration did not converge within {cap} iterations \
         (residual {residual:.3e}); the matrix is likely reducible or periodic"
    )]
    PowerIterationStalled { cap: usize, residual: f64 },
    #[error(
        "power iteration reached two distinct fixed points (gap {gap:.3e}); \
         the eigenvalue at one is not simple, graph assumptions are violated"
    )]
    PerronNotUnique { gap: f64 },
    #[error("mixing rate is not below one (lambda2 = {0})")]
    NoSpectralGap(f64),
    #[error("noise variance for agent {agent} must be positive, got {value}")]
    NonPositiveVariance { agent: usize, value: f64 },
    #[error("noise profile has {got} agents, expected {expected}")]
    NoiseLengthMismatch { got: usize, expected: usize },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {reason}")]
    Parse { path: String, reason: String },
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

/// Undirected graph with self-loops on every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<BTreeSet<usize>>,
}

impl Graph {
    /// Builds a graph from neighbor sets, enforcing symmetry, self-loops and
    /// connectivity.
    pub fn new(neighbors: Vec<BTreeSet<usize>>) -> Result<Self, TopologyError> {
        if neighbors.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        let k = neighbors.len();
        for (node, set) in neighbors.iter().enumerate() {
            if !set.contains(&node) {
                return Err(TopologyError::MissingSelfLoop(node));
            }
            for &other in set {
                if other >= k {
                    return Err(TopologyError::DimensionMismatch {
                        rows: other + 1,
                        cols: other + 1,
                        expected: k,
                    });
                }
                if !neighbors[other].contains(&node) {
                    return Err(TopologyError::AsymmetricAdjacency(node, other));
                }
            }
        }
        let graph = Graph { neighbors };
        if !graph.is_connected() {
            return Err(TopologyError::Disconnected);
        }
        Ok(graph)
    }

    pub fn agents(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighborhood of `k`, self included.
    pub fn neighbors(&self, k: usize) -> &BTreeSet<usize> {
        &self.neighbors[k]
    }

    /// Neighborhood size n_k.
    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    /// Breadth-first connectivity check.
    pub fn is_connected(&self) -> bool {
        let k = self.neighbors.len();
        let mut seen = vec![false; k];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(node) = queue.pop_front() {
            for &next in &self.neighbors[node] {
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    queue.push_back(next);
                }
            }
        }
        count == k
    }
}

/// Topology families the harness can construct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    Grid { sides: Vec<usize> },
    Random { prob: f64, seed: u64 },
}

/// Builds a graph of the given kind on `agents` nodes.
pub fn build_graph(kind: &TopologyKind, agents: usize) -> Result<Graph, TopologyError> {
    if agents == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    match kind {
        TopologyKind::Complete => {
            let all: BTreeSet<usize> = (0..agents).collect();
            Graph::new(vec![all; agents])
        }
        TopologyKind::Ring => {
            let neighbors = (0..agents)
                .map(|k| {
                    let mut set = BTreeSet::from([k]);
                    set.insert((k + 1) % agents);
                    set.insert((k + agents - 1) % agents);
                    set
                })
                .collect();
            Graph::new(neighbors)
        }
        TopologyKind::Grid { sides } => {
            let product: usize = sides.iter().product();
            if sides.is_empty() || product != agents || sides.contains(&0) {
                return Err(TopologyError::BadGridDimensions {
                    sides: sides.clone(),
                    agents,
                });
            }
            let coords = |mut idx: usize| -> Vec<usize> {
                sides
                    .iter()
                    .map(|&s| {
                        let c = idx % s;
                        idx /= s;
                        c
                    })
                    .collect()
            };
            let index = |coord: &[usize]| -> usize {
                coord
                    .iter()
                    .zip(sides)
                    .rev()
                    .fold(0usize, |acc, (&c, &s)| acc * s + c)
            };
            let neighbors = (0..agents)
                .map(|k| {
                    let mut set = BTreeSet::from([k]);
                    let c = coords(k);
                    for (axis, &side) in sides.iter().enumerate() {
                        if c[axis] + 1 < side {
                            let mut up = c.clone();
                            up[axis] += 1;
                            set.insert(index(&up));
                        }
                        if c[axis] > 0 {
                            let mut down = c.clone();
                            down[axis] -= 1;
                            set.insert(index(&down));
                        }
                    }
                    set
                })
                .collect();
            Graph::new(neighbors)
        }
        TopologyKind::Random { prob, seed } => {
            for attempt in 0..RANDOM_GRAPH_RETRIES {
                let mut rng = rng::stream(*seed, 0, attempt as u64);
                let mut neighbors: Vec<BTreeSet<usize>> =
                    (0..agents).map(|k| BTreeSet::from([k])).collect();
                for a in 0..agents {
                    for b in (a + 1)..agents {
                        if rng.random::<f64>() < *prob {
                            neighbors[a].insert(b);
                            neighbors[b].insert(a);
                        }
                    }
                }
                match Graph::new(neighbors) {
                    Ok(graph) => return Ok(graph),
                    Err(TopologyError::Disconnected) => continue,
                    Err(other) => return Err(other),
                }
            }
            Err(TopologyError::DisconnectedAfterRetries(RANDOM_GRAPH_RETRIES))
        }
    }
}

// ---------------------------------------------------------------------------
// Policy validation
// ---------------------------------------------------------------------------

/// One violated combination constraint, with the offending indices.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyViolation {
    /// `a_lk < 0`.
    NegativeEntry { l: usize, k: usize, value: f64 },
    /// Column `k` does not sum to one.
    ColumnSum { k: usize, sum: f64 },
    /// `a_lk != 0` although `l` is not a neighbor of `k`.
    SparsityPattern { l: usize, k: usize, value: f64 },
}

impl fmt::Display for PolicyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyViolation::NegativeEntry { l, k, value } => {
                write!(f, "negative entry a[{l},{k}] = {value}")
            }
            PolicyViolation::ColumnSum { k, sum } => {
                write!(f, "column {k} sums to {sum}, expected 1")
            }
            PolicyViolation::SparsityPattern { l, k, value } => {
                write!(f, "a[{l},{k}] = {value} but {l} is not a neighbor of {k}")
            }
        }
    }
}

/// Outcome of checking a matrix against the combination constraints.
#[derive(Debug, Clone, Default)]
pub struct PolicyReport {
    pub violations: Vec<PolicyViolation>,
}

impl PolicyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PolicyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(f, "all combination constraints hold")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "  - {v}")?;
            }
            Ok(())
        }
    }
}

const COLUMN_SUM_TOL: f64 = 1e-9;

/// Checks non-negativity, unit column sums and the graph sparsity pattern.
/// Always produces a report; dimension mismatch is the only hard error.
pub fn validate_policy(a: &DMatrix<f64>, graph: &Graph) -> Result<PolicyReport, TopologyError> {
    let k = graph.agents();
    if a.nrows() != k || a.ncols() != k {
        return Err(TopologyError::DimensionMismatch {
            rows: a.nrows(),
            cols: a.ncols(),
            expected: k,
        });
    }
    let mut report = PolicyReport::default();
    for col in 0..k {
        let mut sum = 0.0;
        for row in 0..k {
            let value = a[(row, col)];
            if value < 0.0 {
                report.violations.push(PolicyViolation::NegativeEntry {
                    l: row,
                    k: col,
                    value,
                });
            }
            if value != 0.0 && !graph.neighbors(col).contains(&row) {
                report.violations.push(PolicyViolation::SparsityPattern {
                    l: row,
                    k: col,
                    value,
                });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > COLUMN_SUM_TOL {
            report
                .violations
                .push(PolicyViolation::ColumnSum { k: col, sum });
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Spectral analysis
// ---------------------------------------------------------------------------

fn power_fixed_point(a: &DMatrix<f64>, mut v: DVector<f64>) -> Result<DVector<f64>, TopologyError> {
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_CAP {
        let mut next = a * &v;
        let sum: f64 = next.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(TopologyError::PowerIterationStalled {
                cap: POWER_CAP,
                residual,
            });
        }
        next /= sum;
        residual = (&next - &v).amax();
        v = next;
        if residual <= POWER_TOL {
            return Ok(v);
        }
    }
    Err(TopologyError::PowerIterationStalled {
        cap: POWER_CAP,
        residual,
    })
}

/// Perron vector of a left-stochastic matrix by power iteration.
///
/// Runs the iteration from two distinct positive starts; disagreeing limits
/// expose a non-simple eigenvalue at one (reducible structure), which is
/// reported as non-convergence rather than returning an arbitrary fixed point.
pub fn perron_vector(a: &DMatrix<f64>) -> Result<DVector<f64>, TopologyError> {
    let k = a.nrows();
    if k != a.ncols() || k == 0 {
        return Err(TopologyError::DimensionMismatch {
            rows: a.nrows(),
            cols: a.ncols(),
            expected: k.max(1),
        });
    }
    let uniform = DVector::from_element(k, 1.0 / k as f64);
    let ramp_sum = (k * (k + 1) / 2) as f64;
    let ramp = DVector::from_fn(k, |i, _| (i + 1) as f64 / ramp_sum);
    let p = power_fixed_point(a, uniform)?;
    if k > 1 {
        let q = power_fixed_point(a, ramp)?;
        let gap = (&p - &q).amax();
        if gap > 1e-8 {
            return Err(TopologyError::PerronNotUnique { gap });
        }
    }
    let residual = (a * &p - &p).amax();
    if residual > PERRON_RESIDUAL_TOL {
        return Err(TopologyError::PowerIterationStalled {
            cap: POWER_CAP,
            residual,
        });
    }
    Ok(p)
}

fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    let k = a.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Dominant eigenvalue magnitude of the deflated matrix `B = A - p·1ᵀ` by
/// power iteration with a 2-D Rayleigh–Ritz extraction, so complex dominant
/// pairs still yield their modulus.
fn deflated_lambda2(a: &DMatrix<f64>, p: &DVector<f64>) -> Result<f64, TopologyError> {
    let k = a.nrows();
    let apply = |v: &DVector<f64>| -> DVector<f64> { a * v - p * v.sum() };

    // Deterministic start, unrelated to any eigenvector of interest.
    let mut v = DVector::from_fn(k, |i, _| 1.0 + ((i * 37 + 11) % 101) as f64 / 101.0);
    v /= v.norm();

    let mut estimate = f64::INFINITY;
    let mut stable = 0usize;
    for _ in 0..POWER_CAP {
        let w = apply(&v);
        let wnorm = w.norm();
        if wnorm < 1e-300 {
            // B annihilated the iterate; spectrum beyond the Perron root is 0.
            return Ok(0.0);
        }

        // Rayleigh–Ritz on span{v, w}.
        let q1 = v.clone();
        let mut q2 = &w - &q1 * q1.dot(&w);
        let q2norm = q2.norm();
        let new_estimate = if q2norm > 1e-13 * wnorm {
            q2 /= q2norm;
            let bq1 = apply(&q1);
            let bq2 = apply(&q2);
            let m11 = q1.dot(&bq1);
            let m12 = q1.dot(&bq2);
            let m21 = q2.dot(&bq1);
            let m22 = q2.dot(&bq2);
            let trace = m11 + m22;
            let det = m11 * m22 - m12 * m21;
            let disc = trace * trace - 4.0 * det;
            if disc >= 0.0 {
                let root = disc.sqrt();
                (0.5 * (trace + root)).abs().max((0.5 * (trace - root)).abs())
            } else {
                // Complex conjugate pair: |lambda|^2 = det.
                det.abs().sqrt()
            }
        } else {
            // Iterate is already an eigenvector direction.
            q1.dot(&w).abs()
        };

        if (new_estimate - estimate).abs() <= 1e-13 * new_estimate.max(1e-30) {
            stable += 1;
            if stable >= 3 {
                return Ok(new_estimate);
            }
        } else {
            stable = 0;
        }
        estimate = new_estimate;
        v = w / wnorm;
    }
    Err(TopologyError::PowerIterationStalled {
        cap: POWER_CAP,
        residual: estimate,
    })
}

/// Second-largest eigenvalue magnitude of a combination matrix.
pub fn mixing_rate(a: &DMatrix<f64>) -> Result<f64, TopologyError> {
    let k = a.nrows();
    if k != a.ncols() {
        return Err(TopologyError::DimensionMismatch {
            rows: a.nrows(),
            cols: a.ncols(),
            expected: k,
        });
    }
    if k == 1 {
        return Ok(0.0);
    }
    if is_symmetric(a, 1e-12) {
        let eigen = nalgebra::SymmetricEigen::new(a.clone());
        let mut magnitudes: Vec<f64> = eigen.eigenvalues.iter().map(|l| l.abs()).collect();
        magnitudes.sort_by(|x, y| y.partial_cmp(x).expect("eigenvalues are finite"));
        Ok(magnitudes[1])
    } else {
        let p = perron_vector(a)?;
        deflated_lambda2(a, &p)
    }
}

// ---------------------------------------------------------------------------
// Noise profiles
// ---------------------------------------------------------------------------

/// Declared per-agent gradient-noise constants: second-moment upper bounds
/// `sigma_sq` and covariance floor `sigma_lower_sq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub sigma_sq: Vec<f64>,
    pub sigma_lower_sq: Vec<f64>,
}

impl NoiseProfile {
    pub fn new(sigma_sq: Vec<f64>, sigma_lower_sq: Vec<f64>) -> Result<Self, TopologyError> {
        if sigma_sq.len() != sigma_lower_sq.len() {
            return Err(TopologyError::NoiseLengthMismatch {
                got: sigma_lower_sq.len(),
                expected: sigma_sq.len(),
            });
        }
        for (agent, (&upper, &lower)) in sigma_sq.iter().zip(&sigma_lower_sq).enumerate() {
            if upper <= 0.0 || !upper.is_finite() {
                return Err(TopologyError::NonPositiveVariance {
                    agent,
                    value: upper,
                });
            }
            if lower <= 0.0 || lower > upper {
                return Err(TopologyError::NonPositiveVariance {
                    agent,
                    value: lower,
                });
            }
        }
        Ok(NoiseProfile {
            sigma_sq,
            sigma_lower_sq,
        })
    }

    /// Equal constants on every agent.
    pub fn uniform(agents: usize, sigma_sq: f64, sigma_lower_sq: f64) -> Result<Self, TopologyError> {
        NoiseProfile::new(vec![sigma_sq; agents], vec![sigma_lower_sq; agents])
    }

    /// Constants implied by pure isotropic noise of std `sigma_iso` per axis in
    /// `dim` dimensions: second moment `dim·σ²`, covariance floor `σ²`.
    pub fn from_isotropic(sigma_iso: &[f64], dim: usize) -> Result<Self, TopologyError> {
        let upper = sigma_iso.iter().map(|s| s * s * dim as f64).collect();
        let lower = sigma_iso.iter().map(|s| s * s).collect();
        NoiseProfile::new(upper, lower)
    }

    pub fn agents(&self) -> usize {
        self.sigma_sq.len()
    }

    fn check_agents(&self, expected: usize) -> Result<(), TopologyError> {
        if self.agents() != expected {
            return Err(TopologyError::NoiseLengthMismatch {
                got: self.agents(),
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct AgentNoiseRow {
    agent: usize,
    sigma_sq: f64,
    sigma_lower_sq: f64,
}

/// Reads a noise profile from a JSON array of
/// `{agent, sigma_sq, sigma_lower_sq}` rows (agents are 0-indexed).
pub fn read_noise_profile(path: &Path) -> Result<NoiseProfile, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows: Vec<AgentNoiseRow> =
        serde_json::from_str(&text).map_err(|e| TopologyError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    rows.sort_by_key(|r| r.agent);
    for (i, row) in rows.iter().enumerate() {
        if row.agent != i {
            return Err(TopologyError::Parse {
                path: path.display().to_string(),
                reason: format!("agent indices must cover 0..{} exactly", rows.len()),
            });
        }
    }
    NoiseProfile::new(
        rows.iter().map(|r| r.sigma_sq).collect(),
        rows.iter().map(|r| r.sigma_lower_sq).collect(),
    )
}

/// Writes the JSON representation read back by [`read_noise_profile`].
pub fn write_noise_profile(path: &Path, profile: &NoiseProfile) -> Result<(), TopologyError> {
    let rows: Vec<AgentNoiseRow> = (0..profile.agents())
        .map(|agent| AgentNoiseRow {
            agent,
            sigma_sq: profile.sigma_sq[agent],
            sigma_lower_sq: profile.sigma_lower_sq[agent],
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("serializable");
    std::fs::write(path, text).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Combination policies
// ---------------------------------------------------------------------------

/// A validated combination matrix together with its graph, Perron vector and
/// mixing rate. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CombinationPolicy {
    matrix: DMatrix<f64>,
    graph: Graph,
    perron: DVector<f64>,
    lambda2: f64,
}

impl CombinationPolicy {
    /// Validates the matrix against the graph and computes the spectral data.
    pub fn from_matrix(matrix: DMatrix<f64>, graph: Graph) -> Result<Self, TopologyError> {
        let report = validate_policy(&matrix, &graph)?;
        if !report.passed() {
            return Err(TopologyError::InvalidPolicy(report));
        }
        let perron = perron_vector(&matrix)?;
        if perron.iter().any(|&x| x <= 0.0) {
            return Err(TopologyError::PerronNotUnique { gap: perron.amax() });
        }
        let lambda2 = mixing_rate(&matrix)?;
        if lambda2 >= 1.0 - 1e-12 {
            return Err(TopologyError::NoSpectralGap(lambda2));
        }
        Ok(CombinationPolicy {
            matrix,
            graph,
            perron,
            lambda2,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Perron vector `p` with `Ap = p`, `1ᵀp = 1`, entries positive.
    pub fn perron(&self) -> &DVector<f64> {
        &self.perron
    }

    /// Second-largest eigenvalue magnitude.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn agents(&self) -> usize {
        self.graph.agents()
    }

    /// Weight `a_lk` applied by agent `k` to neighbor `l`.
    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.matrix[(l, k)]
    }
}

/// `a_lk = 1/n_k` over the neighborhood of `k`; doubly stochastic on regular
/// graphs.
pub fn uniform_policy(graph: &Graph) -> Result<CombinationPolicy, TopologyError> {
    let k = graph.agents();
    let matrix = DMatrix::from_fn(k, k, |l, col| {
        if graph.neighbors(col).contains(&l) {
            1.0 / graph.degree(col) as f64
        } else {
            0.0
        }
    });
    CombinationPolicy::from_matrix(matrix, graph.clone())
}

/// Asymmetric Metropolis–Hastings policy for heterogeneous noise:
/// `a_lk = σ_k² / max{n_k σ_k², n_l σ_l²}` off the diagonal, diagonal absorbs
/// the remainder. Its Perron vector weights agents by inverse variance, which
/// minimizes `Σ p_k² σ_k²` over valid policies on the graph.
pub fn asymmetric_mh_policy(
    graph: &Graph,
    noise: &NoiseProfile,
) -> Result<CombinationPolicy, TopologyError> {
    let k = graph.agents();
    noise.check_agents(k)?;
    let mut matrix = DMatrix::zeros(k, k);
    for col in 0..k {
        let mut off_diagonal = 0.0;
        for &row in graph.neighbors(col) {
            if row == col {
                continue;
            }
            let n_col = graph.degree(col) as f64 * noise.sigma_sq[col];
            let n_row = graph.degree(row) as f64 * noise.sigma_sq[row];
            let weight = noise.sigma_sq[col] / n_col.max(n_row);
            matrix[(row, col)] = weight;
            off_diagonal += weight;
        }
        matrix[(col, col)] = 1.0 - off_diagonal;
    }
    CombinationPolicy::from_matrix(matrix, graph.clone())
}

/// Escape-time objective `Σ_k p_k² σ_k²` of a weighting `p` under the given
/// noise constants.
pub fn policy_objective(p: &DVector<f64>, noise: &NoiseProfile) -> Result<f64, TopologyError> {
    if p.len() != noise.agents() {
        return Err(TopologyError::LengthMismatch(p.len(), noise.agents()));
    }
    Ok(p.iter()
        .zip(&noise.sigma_sq)
        .map(|(&pk, &sk)| pk * pk * sk)
        .sum())
}

// ---------------------------------------------------------------------------
// Matrix file I/O
// ---------------------------------------------------------------------------

pub const POLICY_CSV_HEADER: &str = "# left-stochastic, entry(l,k)=a_lk";

/// Writes a policy matrix as row-major CSV under the orientation header.
/// Extra comment lines (e.g. a config hash) go right after the header.
pub fn write_policy_csv(
    path: &Path,
    a: &DMatrix<f64>,
    extra_comments: &[String],
) -> Result<(), TopologyError> {
    let mut out = String::new();
    out.push_str(POLICY_CSV_HEADER);
    out.push('\n');
    for comment in extra_comments {
        out.push_str("# ");
        out.push_str(comment);
        out.push('\n');
    }
    for row in 0..a.nrows() {
        let line: Vec<String> = (0..a.ncols()).map(|col| a[(row, col)].to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a row-major policy matrix written by [`write_policy_csv`]. Comment
/// lines are skipped; the matrix must be square.
pub fn read_policy_csv(path: &Path) -> Result<DMatrix<f64>, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse = |reason: String| TopologyError::Parse {
        path: path.display().to_string(),
        reason,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse(format!("line {}: {}", lineno + 1, e)))?;
        rows.push(row);
    }
    let k = rows.len();
    if k == 0 {
        return Err(parse("no data rows".into()));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(parse(format!("expected a square {k}x{k} matrix")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(k: usize) -> Graph {
        build_graph(&TopologyKind::Complete, k).unwrap()
    }

    #[test]
    fn complete_graph_neighborhoods() {
        let g = complete(3);
        for k in 0..3 {
            assert_eq!(g.neighbors(k), &BTreeSet::from([0, 1, 2]));
        }
    }

    #[test]
    fn ring_neighborhoods_wrap() {
        let g = build_graph(&TopologyKind::Ring, 4).unwrap();
        assert_eq!(g.neighbors(0), &BTreeSet::from([3, 0, 1]));
        assert_eq!(g.neighbors(2), &BTreeSet::from([1, 2, 3]));
    }

    /// Independent breadth-first search over the raw neighbor sets.
    fn bfs_connected(g: &Graph) -> bool {
        let k = g.agents();
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &next in g.neighbors(node) {
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn random_graph_is_connected() {
        let g = build_graph(
            &TopologyKind::Random {
                prob: 0.4,
                seed: 7,
            },
            8,
        )
        .unwrap();
        assert_eq!(g.agents(), 8);
        assert!(bfs_connected(&g));
        for k in 0..8 {
            assert!(g.neighbors(k).contains(&k));
        }
    }

    #[test]
    fn random_graph_determinism() {
        let spec = TopologyKind::Random {
            prob: 0.4,
            seed: 7,
        };
        assert_eq!(build_graph(&spec, 8).unwrap(), build_graph(&spec, 8).unwrap());
    }

    #[test]
    fn zero_agents_rejected() {
        assert!(matches!(
            build_graph(&TopologyKind::Complete, 0),
            Err(TopologyError::EmptyGraph)
        ));
    }

    #[test]
    fn bad_grid_dimensions_rejected() {
        assert!(matches!(
            build_graph(&TopologyKind::Grid { sides: vec![2, 2] }, 6),
            Err(TopologyError::BadGridDimensions { .. })
        ));
    }

    #[test]
    fn grid_neighborhoods() {
        let g = build_graph(&TopologyKind::Grid { sides: vec![2, 3] }, 6).unwrap();
        // Node 0 = (0,0): right (1,0)=1 along axis 0 and up (0,1)=2 along axis 1.
        assert_eq!(g.neighbors(0), &BTreeSet::from([0, 1, 2]));
        // Node 3 = (1,1): (0,1)=2, (1,0)=1, (1,2)=5.
        assert_eq!(g.neighbors(3), &BTreeSet::from([1, 2, 3, 5]));
        assert!(bfs_connected(&g));
    }

    #[test]
    fn disconnected_random_fails_loudly() {
        let err = build_graph(
            &TopologyKind::Random {
                prob: 0.0,
                seed: 1,
            },
            4,
        )
        .unwrap_err();
        assert!(matches!(err, TopologyError::DisconnectedAfterRetries(_)));
    }

    #[test]
    fn validate_uniform_on_complete_passes() {
        let g = complete(4);
        let a = DMatrix::from_element(4, 4, 0.25);
        assert!(validate_policy(&a, &g).unwrap().passed());
    }

    #[test]
    fn validate_flags_negative_entry() {
        let g = complete(2);
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.5, -0.2, 0.5]);
        let report = validate_policy(&a, &g).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, PolicyViolation::NegativeEntry { l: 1, k: 0, .. })));
    }

    #[test]
    fn validate_flags_column_sum() {
        let g = complete(2);
        let a = DMatrix::from_row_slice(2, 2, &[0.49, 0.5, 0.5, 0.5]);
        let report = validate_policy(&a, &g).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, PolicyViolation::ColumnSum { k: 0, .. })));
    }

    #[test]
    fn validate_flags_sparsity() {
        // Ring on 4 nodes: 2 is not a neighbor of 0.
        let g = build_graph(&TopologyKind::Ring, 4).unwrap();
        let mut a = uniform_policy(&g).unwrap().matrix().clone();
        a[(2, 0)] += 0.1;
        a[(0, 0)] -= 0.1;
        let report = validate_policy(&a, &g).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, PolicyViolation::SparsityPattern { l: 2, k: 0, .. })));
    }

    #[test]
    fn perron_of_doubly_stochastic_is_uniform() {
        let a = DMatrix::from_element(4, 4, 0.25);
        let p = perron_vector(&a).unwrap();
        for &pk in p.iter() {
            assert!((pk - 0.25).abs() <= 1e-10);
        }
    }

    #[test]
    fn perron_hand_solved_two_by_two() {
        // Columns sum to one; fixed point p = (1/3, 2/3), checked by
        // substitution: A p = (0.5/3 + 0.25*2/3, 0.5/3 + 0.75*2/3) = p.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75]);
        let p = perron_vector(&a).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() <= 1e-10);
        assert!((p[1] - 2.0 / 3.0).abs() <= 1e-10);
        assert!((&a * &p - &p).amax() <= 1e-10);
    }

    #[test]
    fn perron_rejects_reducible_matrix() {
        let a = DMatrix::<f64>::identity(2, 2);
        let err = perron_vector(&a).unwrap_err();
        assert!(matches!(
            err,
            TopologyError::PerronNotUnique { .. } | TopologyError::PowerIterationStalled { .. }
        ));
    }

    #[test]
    fn perron_rejects_periodic_matrix() {
        // 2-cycle without self-loops oscillates.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            perron_vector(&a),
            Err(TopologyError::PowerIterationStalled { .. })
        ));
    }

    #[test]
    fn mixing_rate_of_rank_one_matrices_is_zero() {
        let a2 = DMatrix::from_element(2, 2, 0.5);
        assert!(mixing_rate(&a2).unwrap().abs() <= 1e-12);
        let a5 = DMatrix::from_element(5, 5, 0.2);
        assert!(mixing_rate(&a5).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn mixing_rate_hand_solved_two_by_two() {
        // Eigenvalues are 1 and trace - 1 = 0.25.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75]);
        assert!((mixing_rate(&a).unwrap() - 0.25).abs() <= 1e-10);
    }

    #[test]
    fn mixing_rate_matches_dense_eigensolver_on_random_policies() {
        // Oracle: full complex spectrum from the dense solver.
        for seed in 0..20u64 {
            let k = 3 + (seed % 5) as usize;
            let g = build_graph(
                &TopologyKind::Random {
                    prob: 0.6,
                    seed: 100 + seed,
                },
                k,
            )
            .unwrap();
            let a = random_valid_policy(&g, seed);
            let got = mixing_rate(&a).unwrap();
            let mut magnitudes: Vec<f64> = a
                .clone()
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .collect();
            magnitudes.sort_by(|x, y| y.partial_cmp(x).unwrap());
            assert!(
                (got - magnitudes[1]).abs() <= 1e-8,
                "seed {seed}: {got} vs {}",
                magnitudes[1]
            );
        }
    }

    #[test]
    fn uniform_policy_on_complete_graph() {
        let policy = uniform_policy(&complete(4)).unwrap();
        for l in 0..4 {
            for k in 0..4 {
                assert!((policy.weight(l, k) - 0.25).abs() <= 1e-15);
            }
        }
        for &pk in policy.perron().iter() {
            assert!((pk - 0.25).abs() <= 1e-10);
        }
        assert!(policy.lambda2().abs() <= 1e-10);
    }

    #[test]
    fn uniform_policy_on_ring_three_is_doubly_stochastic() {
        let g = build_graph(&TopologyKind::Ring, 3).unwrap();
        let policy = uniform_policy(&g).unwrap();
        for l in 0..3 {
            let row_sum: f64 = (0..3).map(|k| policy.weight(l, k)).sum();
            assert!((row_sum - 1.0).abs() <= 1e-12);
            for k in 0..3 {
                assert!((policy.weight(l, k) - 1.0 / 3.0).abs() <= 1e-15);
            }
        }
    }

    fn star_graph(k: usize) -> Graph {
        let mut neighbors: Vec<BTreeSet<usize>> = (0..k).map(|i| BTreeSet::from([i, 0])).collect();
        neighbors[0] = (0..k).collect();
        Graph::new(neighbors).unwrap()
    }

    #[test]
    fn uniform_policy_on_star_has_nonuniform_perron() {
        let policy = uniform_policy(&star_graph(3)).unwrap();
        let p = policy.perron();
        // Hand fixed point: hub 3/7, leaves 2/7 each.
        assert!((p[0] - 3.0 / 7.0).abs() <= 1e-9);
        assert!((p[1] - 2.0 / 7.0).abs() <= 1e-9);
        assert!((policy.matrix() * p - p).amax() <= PERRON_RESIDUAL_TOL);
    }

    #[test]
    fn mh_policy_equal_variance_two_agents() {
        let noise = NoiseProfile::uniform(2, 1.0, 1.0).unwrap();
        let policy = asymmetric_mh_policy(&complete(2), &noise).unwrap();
        for l in 0..2 {
            for k in 0..2 {
                assert!((policy.weight(l, k) - 0.5).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn mh_policy_heterogeneous_two_agents() {
        let noise = NoiseProfile::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let policy = asymmetric_mh_policy(&complete(2), &noise).unwrap();
        let a = policy.matrix();
        assert!((a[(0, 0)] - 0.75).abs() <= 1e-15);
        assert!((a[(1, 0)] - 0.25).abs() <= 1e-15);
        assert!((a[(0, 1)] - 0.5).abs() <= 1e-15);
        assert!((a[(1, 1)] - 0.5).abs() <= 1e-15);
        let p = policy.perron();
        assert!((p[0] - 2.0 / 3.0).abs() <= 1e-10);
        assert!((p[1] - 1.0 / 3.0).abs() <= 1e-10);
    }

    #[test]
    fn mh_reduces_to_uniform_under_equal_variances() {
        for kind in [TopologyKind::Ring, TopologyKind::Complete] {
            let g = build_graph(&kind, 6).unwrap();
            let noise = NoiseProfile::uniform(6, 2.5, 1.0).unwrap();
            let mh = asymmetric_mh_policy(&g, &noise).unwrap();
            let uni = uniform_policy(&g).unwrap();
            assert!((mh.matrix() - uni.matrix()).amax() <= 1e-14);
        }
    }

    #[test]
    fn mh_perron_matches_inverse_variances_on_complete_graphs() {
        let sigma = vec![0.5, 1.0, 2.0, 4.0, 8.0];
        let noise = NoiseProfile::new(sigma.clone(), sigma.clone()).unwrap();
        let policy = asymmetric_mh_policy(&complete(5), &noise).unwrap();
        let inv_sum: f64 = sigma.iter().map(|s| 1.0 / s).sum();
        for (k, &s) in sigma.iter().enumerate() {
            assert!((policy.perron()[k] - (1.0 / s) / inv_sum).abs() <= 1e-8);
        }
    }

    #[test]
    fn objective_examples() {
        let noise = NoiseProfile::uniform(4, 1.0, 1.0).unwrap();
        let p = DVector::from_element(4, 0.25);
        assert!((policy_objective(&p, &noise).unwrap() - 0.25).abs() <= 1e-15);

        let noise = NoiseProfile::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let p = DVector::from_vec(vec![2.0 / 3.0, 1.0 / 3.0]);
        assert!((policy_objective(&p, &noise).unwrap() - 6.0 / 9.0).abs() <= 1e-12);

        // Degenerate weighting: the objective is still defined and equals the
        // first agent's variance, even though a valid Perron vector is positive.
        let p = DVector::from_vec(vec![1.0, 0.0]);
        assert!((policy_objective(&p, &noise).unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn objective_length_mismatch() {
        let noise = NoiseProfile::uniform(3, 1.0, 1.0).unwrap();
        let p = DVector::from_element(2, 0.5);
        assert!(matches!(
            policy_objective(&p, &noise),
            Err(TopologyError::LengthMismatch(2, 3))
        ));
    }

    /// Random valid policy on the graph: positive entries on the sparsity
    /// pattern, columns normalized.
    pub(crate) fn random_valid_policy(graph: &Graph, seed: u64) -> DMatrix<f64> {
        let k = graph.agents();
        let mut rng = rng::stream(seed, 0xfeed, 0);
        let mut a = DMatrix::zeros(k, k);
        for col in 0..k {
            let mut sum = 0.0;
            for &row in graph.neighbors(col) {
                let w = 0.05 + rng.random::<f64>();
                a[(row, col)] = w;
                sum += w;
            }
            for &row in graph.neighbors(col) {
                a[(row, col)] /= sum;
            }
        }
        a
    }

    #[test]
    fn mh_objective_beats_random_policy_battery() {
        for seed in 0..10u64 {
            let k = 4 + (seed % 4) as usize;
            let g = build_graph(
                &TopologyKind::Random {
                    prob: 0.5,
                    seed: 300 + seed,
                },
                k,
            )
            .unwrap();
            let mut rng = rng::stream(400 + seed, 0, 0);
            let sigma: Vec<f64> = (0..k).map(|_| 0.25 + 4.0 * rng.random::<f64>()).collect();
            let noise = NoiseProfile::new(sigma.clone(), sigma).unwrap();
            let mh = asymmetric_mh_policy(&g, &noise).unwrap();
            let mh_objective = policy_objective(mh.perron(), &noise).unwrap();
            for trial in 0..20u64 {
                let a = random_valid_policy(&g, 500 + seed * 100 + trial);
                let p = perron_vector(&a).unwrap();
                let objective = policy_objective(&p, &noise).unwrap();
                assert!(
                    mh_objective <= objective + 1e-9,
                    "seed {seed} trial {trial}: {mh_objective} > {objective}"
                );
            }
        }
    }

    #[test]
    fn constructed_policies_satisfy_invariants() {
        let cases: Vec<(Graph, NoiseProfile)> = vec![
            (complete(4), NoiseProfile::uniform(4, 1.0, 1.0).unwrap()),
            (
                build_graph(&TopologyKind::Ring, 6).unwrap(),
                NoiseProfile::new(
                    vec![1.0, 2.0, 0.5, 3.0, 1.5, 2.5],
                    vec![0.5, 1.0, 0.25, 1.5, 0.75, 1.25],
                )
                .unwrap(),
            ),
            (star_graph(5), NoiseProfile::uniform(5, 2.0, 0.5).unwrap()),
        ];
        for (graph, noise) in cases {
            for policy in [
                uniform_policy(&graph).unwrap(),
                asymmetric_mh_policy(&graph, &noise).unwrap(),
            ] {
                assert!(validate_policy(policy.matrix(), &graph).unwrap().passed());
                let residual = (policy.matrix() * policy.perron() - policy.perron()).amax();
                assert!(residual <= PERRON_RESIDUAL_TOL);
                assert!(policy.lambda2() < 1.0);
                let sum: f64 = policy.perron().iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(policy.perron().iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn symmetric_policies_have_uniform_perron() {
        // Uniform policy on regular graphs is symmetric.
        for (kind, k) in [
            (TopologyKind::Ring, 5usize),
            (TopologyKind::Complete, 7),
            (TopologyKind::Ring, 8),
        ] {
            let g = build_graph(&kind, k).unwrap();
            let policy = uniform_policy(&g).unwrap();
            assert!(is_symmetric(policy.matrix(), 1e-14));
            for &pk in policy.perron().iter() {
                assert!((pk - 1.0 / k as f64).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn policy_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.csv");
        let noise = NoiseProfile::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let policy = asymmetric_mh_policy(&complete(2), &noise).unwrap();
        write_policy_csv(&path, policy.matrix(), &["config_hash=deadbeef".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(POLICY_CSV_HEADER));
        let back = read_policy_csv(&path).unwrap();
        assert!((policy.matrix() - &back).amax() == 0.0);
    }

    #[test]
    fn noise_profile_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.json");
        let profile = NoiseProfile::new(vec![1.0, 4.0], vec![0.5, 2.0]).unwrap();
        write_noise_profile(&path, &profile).unwrap();
        assert_eq!(read_noise_profile(&path).unwrap(), profile);
    }

    #[test]
    fn noise_profile_rejects_bad_bounds() {
        assert!(NoiseProfile::new(vec![1.0], vec![2.0]).is_err());
        assert!(NoiseProfile::new(vec![0.0], vec![0.0]).is_err());
        assert!(NoiseProfile::new(vec![1.0, 1.0], vec![1.0]).is_err());
    }
}
