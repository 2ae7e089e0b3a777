//! The four CLI commands: `policy`, `run`, `sweep`, `check`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::checks;
use super::config::{build_bundle, ExperimentBundle, ExperimentConfig, PolicyName, PolicySpec};
use super::plot::{self, Axes, Series};
use super::HarnessError;
use crate::engine::{self, EngineError, NetworkState, StepConfig};
use crate::landscape::check_gradient;
use crate::stationarity::{
    classify, escape_scaling_fit, measure_escape, EscapeStats, Region, StationarityError,
};
use crate::topology::{policy_objective, uniform_policy, write_policy_csv, PERRON_RESIDUAL_TOL};

pub const METRICS_CSV_HEADER: &str = "iter,J_centroid,grad_norm_sq,disagreement4,region,escaped_flag";
pub const ESCAPE_CSV_HEADER: &str = "K,policy,seed,escape_iter,censored";

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// One recorded metric row of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub iter: usize,
    pub j_centroid: f64,
    pub grad_norm_sq: f64,
    pub disagreement4: f64,
    pub region: &'static str,
    pub escaped: bool,
}

impl MetricRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter,
            self.j_centroid,
            self.grad_norm_sq,
            self.disagreement4,
            self.region,
            u8::from(self.escaped)
        )
    }
}

/// Trajectory metrics of one seeded run plus bookkeeping.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    pub escape_iteration: Option<usize>,
    pub wall_clock: Duration,
}

impl RunRecord {
    /// Appends a row, enforcing strictly increasing iterations.
    fn push(&mut self, row: MetricRow) -> Result<(), HarnessError> {
        if let Some(last) = self.rows.last() {
            if row.iter <= last.iter {
                return Err(HarnessError::Internal(format!(
                    "metric rows must be strictly increasing: {} after {}",
                    row.iter, last.iter
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Reads the `# config_hash=` header of an output file and compares it to
/// the given config.
pub fn verify_csv_hash(path: &Path, config: &ExperimentConfig) -> Result<bool, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let expected = format!("# config_hash={}", config.hash());
    Ok(text.lines().any(|line| line == expected))
}

fn ensure_out_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents)
        .map_err(|e| HarnessError::Config(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// policy
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PolicySummary {
    config_hash: String,
    agents: usize,
    policy: String,
    lambda2: f64,
    perron: Vec<f64>,
    objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniform_objective: Option<f64>,
}

/// Builds the configured policy, writes its matrix (CSV) and a JSON summary
/// with the Perron vector, mixing rate and escape-time objective.
pub fn cmd_policy(config: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    let bundle = build_bundle(config, config.agents[0])?;
    ensure_out_dir(&config.out_dir)?;
    let hash_comment = format!("config_hash={}", bundle.config_hash);
    let matrix_path = config.out_dir.join("policy_A.csv");
    write_policy_csv(&matrix_path, bundle.policy.matrix(), &[hash_comment])?;

    let objective = policy_objective(bundle.policy.perron(), &bundle.declared_noise)?;
    let uniform_objective = match &config.policy {
        PolicySpec::Named(PolicyName::Mh) => {
            let uniform = uniform_policy(&bundle.graph)?;
            Some(policy_objective(uniform.perron(), &bundle.declared_noise)?)
        }
        _ => None,
    };
    let summary = PolicySummary {
        config_hash: bundle.config_hash.clone(),
        agents: bundle.agents,
        policy: config.policy.label(),
        lambda2: bundle.policy.lambda2(),
        perron: bundle.policy.perron().iter().copied().collect(),
        objective,
        uniform_objective,
    };
    let summary_path = config.out_dir.join("policy_summary.json");
    write_file(
        &summary_path,
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    println!(
        "policy {} on K={}: lambda2 = {}, objective = {}",
        summary.policy, summary.agents, summary.lambda2, summary.objective
    );
    Ok(summary_path)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct CsvSink {
    file: std::io::BufWriter<fs::File>,
}

impl CsvSink {
    fn create(path: &Path, config_hash: &str, header: &str) -> Result<Self, HarnessError> {
        let file = fs::File::create(path)
            .map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", path.display())))?;
        let mut sink = CsvSink {
            file: std::io::BufWriter::new(file),
        };
        sink.line(&format!("# config_hash={config_hash}"))?;
        sink.line(header)?;
        Ok(sink)
    }

    fn line(&mut self, line: &str) -> Result<(), HarnessError> {
        writeln!(self.file, "{line}")
            .map_err(|e| HarnessError::Internal(format!("write failed: {e}")))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.file
            .flush()
            .map_err(|e| HarnessError::Internal(format!("flush failed: {e}")))
    }
}

fn record_iteration(iter: usize, total: usize, cadence: usize) -> bool {
    iter == total || (iter % cadence == 0)
}

/// Single diffusion run with incremental CSV output; optionally the two
/// centralized baselines run side-by-side on the same seed streams. On
/// divergence the partial CSV is kept and the error carries exit code 3.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let bundle = build_bundle(config, config.agents[0])?;
    ensure_out_dir(&config.out_dir)?;
    let classifier = bundle.classifier().map_err(HarnessError::from_classifier)?;
    let metrics_path = config.out_dir.join("metrics.csv");
    let mut sink = CsvSink::create(&metrics_path, &bundle.config_hash, METRICS_CSV_HEADER)?;

    let start_time = Instant::now();
    let j_start = bundle.loss.value(&bundle.init);
    let escape_threshold = j_start - bundle.epsilon_drop;
    let mut record = RunRecord {
        config_hash: bundle.config_hash.clone(),
        rows: Vec::new(),
        escape_iteration: None,
        wall_clock: Duration::ZERO,
    };

    let mut state = NetworkState::replicated(bundle.agents, &bundle.init);
    let mut escaped_at: Option<usize> = None;
    for iter in 1..=config.iters {
        match engine::diffusion_step(&state, &bundle.oracle, &bundle.policy, &bundle.step) {
            Ok(next) => state = next,
            Err(EngineError::Diverged {
                agent,
                iteration,
                value,
            }) => {
                sink.finish()?;
                return Err(HarnessError::Diverged(EngineError::Diverged {
                    agent,
                    iteration,
                    value,
                }));
            }
            Err(other) => return Err(other.into()),
        }
        let centroid = state.centroid(bundle.policy.perron())?;
        let j = bundle.loss.value(&centroid);
        if escaped_at.is_none() && j <= escape_threshold {
            escaped_at = Some(iter);
        }
        if record_iteration(iter, config.iters, config.record_cadence) {
            let label = classify(&centroid, bundle.loss.as_ref(), &classifier)
                .map_err(HarnessError::from_classifier)?;
            let row = MetricRow {
                iter,
                j_centroid: j,
                grad_norm_sq: label.grad_norm_sq,
                disagreement4: engine::disagreement4(&state, bundle.policy.perron())?,
                region: label.region.as_str(),
                escaped: escaped_at.is_some(),
            };
            sink.line(&row.csv_line())?;
            record.push(row)?;
        }
    }
    sink.finish()?;
    record.escape_iteration = escaped_at;

    if config.baselines {
        run_baselines(config, &bundle, &classifier)?;
    }
    record.wall_clock = start_time.elapsed();

    let summary_path = config.out_dir.join("run_summary.json");
    #[derive(Serialize)]
    struct RunSummary {
        config_hash: String,
        iters: usize,
        final_j_centroid: f64,
        escape_iteration: Option<usize>,
        epsilon_drop: f64,
        wall_clock_secs: f64,
    }
    let final_j = record.rows.last().map(|r| r.j_centroid).unwrap_or(j_start);
    write_file(
        &summary_path,
        &serde_json::to_string_pretty(&RunSummary {
            config_hash: bundle.config_hash.clone(),
            iters: config.iters,
            final_j_centroid: final_j,
            escape_iteration: record.escape_iteration,
            epsilon_drop: bundle.epsilon_drop,
            wall_clock_secs: record.wall_clock.as_secs_f64(),
        })
        .expect("serializable"),
    )?;
    Ok(record)
}

/// Centralized full- and sampled-gradient recursions on the same seed
/// streams, written with the shared metric schema (single iterate, so the
/// disagreement column is zero).
fn run_baselines(
    config: &ExperimentConfig,
    bundle: &ExperimentBundle,
    classifier: &crate::stationarity::ClassifierParams,
) -> Result<(), HarnessError> {
    let p = bundle.policy.perron().clone();
    let j_start = bundle.loss.value(&bundle.init);
    let escape_threshold = j_start - bundle.epsilon_drop;

    for (name, sampled) in [("metrics_central_full.csv", false), ("metrics_central_sampled.csv", true)] {
        let path = config.out_dir.join(name);
        let mut sink = CsvSink::create(&path, &bundle.config_hash, METRICS_CSV_HEADER)?;
        let mut w = bundle.init.clone();
        let mut escaped = false;
        for iter in 1..=config.iters {
            let iteration = iter - 1;
            w = if sampled {
                let mut rng = crate::rng::side_stream(bundle.oracle.seed(), 1, iteration as u64);
                engine::centralized_sampled_step(
                    &w,
                    &bundle.oracle,
                    &p,
                    &bundle.step,
                    iteration,
                    &mut rng,
                )?
            } else {
                engine::centralized_full_step(&w, &bundle.oracle, &p, &bundle.step, iteration)?
            };
            let j = bundle.loss.value(&w);
            if !escaped && j <= escape_threshold {
                escaped = true;
            }
            if record_iteration(iter, config.iters, config.record_cadence) {
                let label = classify(&w, bundle.loss.as_ref(), classifier)
                    .map_err(HarnessError::from_classifier)?;
                sink.line(
                    &MetricRow {
                        iter,
                        j_centroid: j,
                        grad_norm_sq: label.grad_norm_sq,
                        disagreement4: 0.0,
                        region: label.region.as_str(),
                        escaped,
                    }
                    .csv_line(),
                )?;
            }
        }
        sink.finish()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SweepSizeSummary {
    agents: usize,
    median: f64,
    quartile_low: f64,
    quartile_high: f64,
    censored: usize,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    config_hash: String,
    policy: String,
    sizes: Vec<SweepSizeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
    wall_clock_secs: f64,
}

/// Escape statistics per network size for the configured policy.
pub struct SweepOutcome {
    pub per_size: Vec<(usize, EscapeStats)>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Measures escape times across the agent list under step-size
/// normalization, fits the log-log scaling slope, and writes the escape CSV,
/// a JSON summary and the two SVG plots (centroid-loss trajectories per K,
/// median escape time vs K).
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepOutcome, HarnessError> {
    if config.agents.len() < 3 {
        return Err(HarnessError::Config(format!(
            "sweep needs at least 3 network sizes, got {:?}",
            config.agents
        )));
    }
    ensure_out_dir(&config.out_dir)?;
    let start_time = Instant::now();
    let seeds = config.seeds.seeds();

    let cells: Result<Vec<(usize, EscapeStats)>, HarnessError> = config
        .agents
        .par_iter()
        .map(|&agents| {
            let bundle = build_bundle(config, agents)?;
            let classifier = bundle.classifier().map_err(HarnessError::from_classifier)?;
            let stats = measure_escape(
                &bundle.oracle,
                &bundle.policy,
                &bundle.step,
                &bundle.init,
                bundle.epsilon_drop,
                config.max_iters,
                &seeds,
                &classifier,
            )
            .map_err(HarnessError::from_classifier)?;
            Ok((agents, stats))
        })
        .collect();
    let per_size = cells?;

    let config_hash = config.hash();
    let escape_path = config.out_dir.join("escape.csv");
    let mut sink = CsvSink::create(&escape_path, &config_hash, ESCAPE_CSV_HEADER)?;
    let policy_label = config.policy.label();
    for (agents, stats) in &per_size {
        for outcome in &stats.outcomes {
            sink.line(&format!(
                "{agents},{policy_label},{},{},{}",
                outcome.seed,
                outcome.iterations,
                u8::from(outcome.censored)
            ))?;
        }
    }
    sink.finish()?;

    for (agents, stats) in &per_size {
        if stats.all_censored() {
            eprintln!(
                "warning: all seeds censored at K={agents}; scaling fit will be skipped"
            );
        }
    }
    let fit_input: Vec<(usize, EscapeStats)> = per_size
        .iter()
        .filter(|(_, stats)| stats.censored_count == 0)
        .cloned()
        .collect();
    let fit = if fit_input.len() >= 3 {
        match escape_scaling_fit(&fit_input) {
            Ok((slope, intercept)) => Some((slope, intercept)),
            Err(StationarityError::CensoredInput(_)) => None,
            Err(other) => return Err(HarnessError::from_classifier(other)),
        }
    } else {
        eprintln!("warning: fewer than 3 uncensored sizes; scaling fit skipped");
        None
    };

    write_sweep_plots(config, &config_hash, &per_size)?;

    let summary = SweepSummary {
        config_hash: config_hash.clone(),
        policy: policy_label,
        sizes: per_size
            .iter()
            .map(|(agents, stats)| SweepSizeSummary {
                agents: *agents,
                median: stats.median,
                quartile_low: stats.quartile_low,
                quartile_high: stats.quartile_high,
                censored: stats.censored_count,
            })
            .collect(),
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        wall_clock_secs: start_time.elapsed().as_secs_f64(),
    };
    write_file(
        &config.out_dir.join("sweep_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    for size in &summary.sizes {
        println!(
            "K={}: median escape {} iters (IQR {}..{}, censored {})",
            size.agents, size.median, size.quartile_low, size.quartile_high, size.censored
        );
    }
    if let Some((slope, _)) = fit {
        println!("log-log escape-time slope vs K: {slope:.4}");
    }
    Ok(SweepOutcome {
        per_size,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    })
}

/// Representative centroid-loss trajectory per K (first seed) plus the
/// median-vs-K scaling plot.
fn write_sweep_plots(
    config: &ExperimentConfig,
    config_hash: &str,
    per_size: &[(usize, EscapeStats)],
) -> Result<(), HarnessError> {
    let base_seed = config.seeds.base;
    let horizon_cap = config.max_iters;
    let mut trajectory_series = Vec::new();
    for (agents, stats) in per_size {
        let bundle = build_bundle(config, *agents)?;
        let horizon = ((2.0 * stats.median) as usize + 50).min(horizon_cap);
        let seeded = bundle.oracle.with_seed(base_seed);
        let mut state = NetworkState::replicated(bundle.agents, &bundle.init);
        let mut points = vec![(0.0, bundle.loss.value(&bundle.init))];
        for iter in 1..=horizon {
            state = engine::diffusion_step(&state, &seeded, &bundle.policy, &bundle.step)?;
            if record_iteration(iter, horizon, config.record_cadence) {
                let centroid = state.centroid(bundle.policy.perron())?;
                points.push((iter as f64, bundle.loss.value(&centroid)));
            }
        }
        trajectory_series.push(Series {
            label: format!("K={agents}"),
            points,
        });
    }
    write_file(
        &config.out_dir.join("sweep_trajectories.svg"),
        &plot::line_chart(
            Axes {
                title: "centroid loss vs iteration",
                x_label: "iteration",
                y_label: "J(w_c)",
                log_x: false,
                log_y: false,
            },
            &trajectory_series,
            config_hash,
        ),
    )?;

    let scaling_points: Vec<(f64, f64)> = per_size
        .iter()
        .filter(|(_, stats)| stats.censored_count == 0)
        .map(|(agents, stats)| (*agents as f64, stats.median))
        .collect();
    let scaling_series = vec![Series {
        label: "median escape time".into(),
        points: scaling_points,
    }];
    write_file(
        &config.out_dir.join("sweep_scaling.svg"),
        &plot::line_chart(
            Axes {
                title: "median escape time vs network size",
                x_label: "K",
                y_label: "iterations to escape",
                log_x: true,
                log_y: true,
            },
            &scaling_series,
            config_hash,
        ),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CheckItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs the cross-module property suite and prints one pass/fail line per
/// item. Returns all items; the caller maps failures to exit code 1.
pub fn cmd_check(config: &ExperimentConfig) -> Result<Vec<CheckItem>, HarnessError> {
    let mut items = Vec::new();
    let mut push = |items: &mut Vec<CheckItem>, name: &'static str, passed: bool, detail: String| {
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        items.push(CheckItem {
            name,
            passed,
            detail,
        });
    };

    let bundle = build_bundle(config, config.agents[0])?;

    // Policy constraints and spectral invariants.
    let report = crate::topology::validate_policy(bundle.policy.matrix(), &bundle.graph)?;
    push(
        &mut items,
        "policy-constraints",
        report.passed(),
        format!("{report}"),
    );
    let residual = (bundle.policy.matrix() * bundle.policy.perron() - bundle.policy.perron()).amax();
    push(
        &mut items,
        "perron-residual",
        residual <= PERRON_RESIDUAL_TOL,
        format!("|Ap - p|_inf = {residual:.3e} (tol {PERRON_RESIDUAL_TOL:.0e})"),
    );
    push(
        &mut items,
        "mixing-rate-gap",
        bundle.policy.lambda2() < 1.0,
        format!("lambda2 = {}", bundle.policy.lambda2()),
    );

    // Gradient oracle agreement at random points.
    let mut worst = 0.0f64;
    {
        use rand::Rng;
        let mut rng = crate::rng::stream(0xc0ffee, 0, 0);
        for _ in 0..100 {
            let w = DVector::from_fn(bundle.loss.dim(), |_, _| 2.0 * rng.random::<f64>() - 1.0);
            worst = worst.max(check_gradient(bundle.loss.as_ref(), &w)?);
        }
    }
    push(
        &mut items,
        "gradient-oracle",
        worst <= 1e-5,
        format!("worst relative error over 100 points = {worst:.3e} (tol 1e-5)"),
    );

    // Classifier preconditions.
    match bundle.classifier() {
        Ok(params) => push(
            &mut items,
            "classifier-preconditions",
            true,
            format!(
                "c1 = {:.6}, c2 = {:.6}, threshold = {:.3e}",
                params.c1,
                params.c2,
                params.grad_threshold()
            ),
        ),
        Err(err) => push(
            &mut items,
            "classifier-preconditions",
            false,
            err.to_string(),
        ),
    }

    // Variance bounds of the aggregated noise at the initial point.
    let draws = 100_000;
    let (moment, moment_se) = checks::aggregated_noise_second_moment(
        &bundle.oracle,
        bundle.policy.perron(),
        &bundle.init,
        draws,
    )?;
    let bound = policy_objective(bundle.policy.perron(), &bundle.declared_noise)?;
    push(
        &mut items,
        "noise-variance-bound",
        moment <= bound * 1.05 + 4.0 * moment_se,
        format!("E|s|^2 = {moment:.6} vs bound {bound:.6} (se {moment_se:.2e})"),
    );
    let range = checks::aggregated_noise_covariance_range(
        &bundle.oracle,
        bundle.policy.perron(),
        &bundle.init,
        draws,
    )?;
    let lower_bound: f64 = bundle
        .policy
        .perron()
        .iter()
        .zip(&bundle.declared_noise.sigma_lower_sq)
        .map(|(&p, &s)| p * p * s)
        .sum();
    let sandwich_ok = range.min_eig >= lower_bound - 4.0 * range.min_se
        && range.max_eig <= bound + 4.0 * range.max_se;
    push(
        &mut items,
        "noise-covariance-sandwich",
        sandwich_ok,
        format!(
            "eigs [{:.6}, {:.6}] vs bounds [{lower_bound:.6}, {bound:.6}]",
            range.min_eig, range.max_eig
        ),
    );

    // Centroid recursion identity over a 1000-step run.
    let step = &bundle.step;
    let trajectory = engine::run_diffusion(
        &bundle.oracle,
        &bundle.policy,
        step,
        &bundle.init,
        1_000,
        true,
    )?;
    let deviation = engine::centroid_recursion_check(&trajectory, bundle.policy.perron())?;
    push(
        &mut items,
        "centroid-identity",
        deviation <= 1e-10,
        format!("max deviation {deviation:.3e} over 1000 steps (tol 1e-10)"),
    );

    // Negative control: a non-symmetric star policy with its Perron vector
    // replaced by uniform weights must break the identity.
    {
        let mut neighbors: Vec<std::collections::BTreeSet<usize>> =
            (0..4).map(|i| std::collections::BTreeSet::from([i, 0])).collect();
        neighbors[0] = (0..4).collect();
        let star = crate::topology::Graph::new(neighbors)?;
        let star_policy = uniform_policy(&star)?;
        let star_oracle = crate::landscape::StochasticOracle::new(
            bundle.loss.clone(),
            crate::topology::NoiseProfile::uniform(4, 1.0, 1.0)?,
            vec![0.1; 4],
            false,
            7,
        )?;
        let star_step = StepConfig::raw(0.05).map_err(|e| HarnessError::Internal(e.to_string()))?;
        let mut w0 = DVector::zeros(bundle.loss.dim());
        w0[0] = 1.0;
        let star_run =
            engine::run_diffusion(&star_oracle, &star_policy, &star_step, &w0, 50, true)?;
        let wrong = engine::centroid_recursion_check(&star_run, &DVector::from_element(4, 0.25))?;
        let right = engine::centroid_recursion_check(&star_run, star_policy.perron())?;
        push(
            &mut items,
            "centroid-identity-negative-control",
            wrong > 1e-6 && right <= 1e-10,
            format!("wrong weights deviate {wrong:.3e}, Perron weights {right:.3e}"),
        );
    }

    // Fourth-order disagreement scaling in the step size.
    let scaling =
        checks::disagreement_scaling_experiment(&[0.02, 0.01, 0.005, 0.0025], 6, 0.1, 8_000, 99)?;
    push(
        &mut items,
        "disagreement-mu4-slope",
        (3.5..=4.5).contains(&scaling.slope),
        format!("log-log slope {:.3} (expect within [3.5, 4.5])", scaling.slope),
    );

    // One-step descent from a large-gradient start.
    if let Ok(params) = bundle.classifier() {
        let mut start = DVector::zeros(bundle.loss.dim());
        start.fill(1.0);
        let label = classify(&start, bundle.loss.as_ref(), &params)
            .map_err(HarnessError::from_classifier)?;
        if label.region == Region::G {
            let mean_drop = checks::one_step_descent_experiment(
                &bundle.oracle,
                &bundle.policy,
                step,
                &start,
                200,
            )?;
            push(
                &mut items,
                "descent-in-large-gradient-region",
                mean_drop < 0.0,
                format!("mean one-step dJ = {mean_drop:.3e} over 200 seeds"),
            );
        } else {
            push(
                &mut items,
                "descent-in-large-gradient-region",
                true,
                format!("start classifies as {:?}; descent check skipped", label.region),
            );
        }
    }

    let failed = items.iter().filter(|i| !i.passed).count();
    println!(
        "{} of {} checks passed",
        items.len() - failed,
        items.len()
    );
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_iteration_counts_match_ceiling() {
        // cadence 10, 1000 iters -> 100 rows; cadence 3, 10 iters -> 4 rows.
        let count = |iters: usize, cadence: usize| {
            (1..=iters)
                .filter(|&i| record_iteration(i, iters, cadence))
                .count()
        };
        assert_eq!(count(1000, 10), 100);
        assert_eq!(count(10, 3), 4);
        assert_eq!(count(5, 10), 1);
    }

    #[test]
    fn metric_rows_enforce_increasing_iterations() {
        let mut record = RunRecord {
            config_hash: "x".into(),
            rows: Vec::new(),
            escape_iteration: None,
            wall_clock: Duration::ZERO,
        };
        let row = |iter| MetricRow {
            iter,
            j_centroid: 0.0,
            grad_norm_sq: 0.0,
            disagreement4: 0.0,
            region: "M",
            escaped: false,
        };
        record.push(row(1)).unwrap();
        record.push(row(5)).unwrap();
        assert!(record.push(row(5)).is_err());
    }
}
