//! Monte Carlo batches of learner runs and their report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use safescout::classifier::{classify, classify_estimates, Label, ThresholdRoute};
use safescout::format::{round_sig, REPORT_DIGITS};
use safescout::learner::{self, jsonl, Termination};
use safescout::oracle::TrustOracle;
use safescout::{EnvironmentSpec64, RunLog64};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// `|p_hat - p|` counted as an accurate estimate in the aggregate.
pub const ERROR_TOLERANCE: f64 = 0.08;

fn r(x: f64) -> f64 {
    round_sig(x, REPORT_DIGITS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    /// One-based cell index.
    pub cell: usize,
    pub true_p: f64,
    pub visits: u64,
    pub estimate: f64,
    pub c: f64,
    pub eliminated_at: Option<u64>,
    pub label: Label,
    pub reference_label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub termination: Termination,
    pub iterations: u64,
    pub initial_cell: usize,
    pub c_threshold: f64,
    pub route: ThresholdRoute,
    pub k_star: usize,
    pub safe_set: Vec<usize>,
    pub matches_reference: bool,
    /// Steps spent in cells labeled unsafe by the true-value classification.
    pub unsafe_visits: u64,
    pub last_unsafe_visit: Option<u64>,
    pub cells: Vec<CellSummary>,
}

/// Classification of the true parameters, the yardstick for agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub c_threshold: f64,
    pub route: ThresholdRoute,
    pub safe_set: Vec<usize>,
    pub unsafe_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub replications: usize,
    pub terminated_empty: usize,
    pub iteration_cap_hits: usize,
    pub mean_iterations: f64,
    /// Per cell, fraction of runs whose label matches the reference.
    pub label_agreement: Vec<f64>,
    pub mean_label_agreement: f64,
    pub exact_safe_set_rate: f64,
    pub error_tolerance: f64,
    /// Fraction of (run, cell) pairs with `|p_hat - p| <= error_tolerance`.
    pub within_tolerance: f64,
    pub error_quantiles: Quantiles,
    pub mean_unsafe_visits: f64,
    pub max_unsafe_visits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub replications: usize,
    pub reference: Reference,
    pub aggregate: Aggregate,
    pub runs: Vec<ReplicationSummary>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("report: {e}")))
    }
}

pub struct Experiment {
    pub logs: Vec<RunLog64>,
    pub report: ExperimentReport,
}

fn reference(env: &EnvironmentSpec64) -> Result<Reference, CliError> {
    let res = classify_estimates(&env.true_p).map_err(|e| CliError::Invalid(e.to_string()))?;
    let safe_set: Vec<usize> = res.safe_set.iter().map(|k| k + 1).collect();
    Ok(Reference {
        c_threshold: r(res.c_threshold),
        route: res.route,
        unsafe_cells: (1..=env.cell_count())
            .filter(|k| !safe_set.contains(k))
            .collect(),
        safe_set,
    })
}

fn summarize(
    replication: usize,
    log: &RunLog64,
    env: &EnvironmentSpec64,
    reference: &Reference,
    reference_labels: &[Label],
) -> Result<ReplicationSummary, CliError> {
    let c = log.final_c();
    let est = log.final_estimates();
    let res = classify(&c, &est).map_err(|e| CliError::Invalid(e.to_string()))?;
    let safe_set: Vec<usize> = res.safe_set.iter().map(|k| k + 1).collect();
    let unsafe_steps = log
        .steps
        .iter()
        .filter(|s| reference.unsafe_cells.contains(&(s.cell + 1)));
    let (unsafe_visits, last_unsafe_visit) =
        unsafe_steps.fold((0, None), |(n, _), s| (n + 1, Some(s.iteration)));
    let cells = log
        .final_cells
        .iter()
        .enumerate()
        .map(|(k, f)| CellSummary {
            cell: k + 1,
            true_p: env.true_p[k],
            visits: f.visits,
            estimate: r(f.estimate),
            c: r(c[k]),
            eliminated_at: f.eliminated_at,
            label: res.labels[k],
            reference_label: reference_labels[k],
        })
        .collect();
    Ok(ReplicationSummary {
        replication,
        termination: log.terminated,
        iterations: log.iterations(),
        initial_cell: log.header.initial_cell + 1,
        c_threshold: r(res.c_threshold),
        route: res.route,
        k_star: res.k_star,
        matches_reference: safe_set == reference.safe_set,
        safe_set,
        unsafe_visits,
        last_unsafe_visit,
        cells,
    })
}

/// Nearest-rank quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn aggregate(runs: &[ReplicationSummary], m: usize) -> Aggregate {
    let n = runs.len() as f64;
    let mut errors: Vec<f64> = runs
        .iter()
        .flat_map(|s| s.cells.iter().map(|c| (c.estimate - c.true_p).abs()))
        .collect();
    errors.sort_by(f64::total_cmp);
    let within =
        errors.iter().filter(|&&e| e <= ERROR_TOLERANCE).count() as f64 / errors.len() as f64;
    let label_agreement: Vec<f64> = (0..m)
        .map(|k| {
            let agree = runs
                .iter()
                .filter(|s| s.cells[k].label == s.cells[k].reference_label)
                .count();
            r(agree as f64 / n)
        })
        .collect();
    Aggregate {
        replications: runs.len(),
        terminated_empty: runs
            .iter()
            .filter(|s| s.termination == Termination::ActiveSetEmpty)
            .count(),
        iteration_cap_hits: runs
            .iter()
            .filter(|s| s.termination == Termination::IterationCap)
            .count(),
        mean_iterations: r(runs.iter().map(|s| s.iterations as f64).sum::<f64>() / n),
        mean_label_agreement: r(label_agreement.iter().sum::<f64>() / m as f64),
        label_agreement,
        exact_safe_set_rate: r(runs.iter().filter(|s| s.matches_reference).count() as f64 / n),
        error_tolerance: ERROR_TOLERANCE,
        within_tolerance: r(within),
        error_quantiles: Quantiles {
            min: r(quantile(&errors, 0.0)),
            q10: r(quantile(&errors, 0.1)),
            q50: r(quantile(&errors, 0.5)),
            q90: r(quantile(&errors, 0.9)),
            max: r(quantile(&errors, 1.0)),
        },
        mean_unsafe_visits: r(runs.iter().map(|s| s.unsafe_visits as f64).sum::<f64>() / n),
        max_unsafe_visits: runs.iter().map(|s| s.unsafe_visits).max().unwrap_or(0),
    }
}

pub fn shard_path(dir: &Path, replication: usize) -> PathBuf {
    dir.join("runs").join(format!("run-{replication:04}.jsonl"))
}

/// Runs every replication; when `out` is given each writes its own log shard.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    env: &EnvironmentSpec64,
    seed: u64,
    replications: usize,
    out: Option<&Path>,
) -> Result<Experiment, CliError> {
    if replications == 0 {
        return Err(CliError::Invalid("replications must be at least 1".into()));
    }
    let m = env.cell_count();
    let reference = reference(env)?;
    let ref_labels: Vec<Label> = (1..=m)
        .map(|k| {
            if reference.safe_set.contains(&k) {
                Label::Safe
            } else {
                Label::Unsafe
            }
        })
        .collect();
    if let Some(dir) = out {
        let runs = dir.join("runs");
        std::fs::create_dir_all(&runs).map_err(|e| CliError::io(&runs, e))?;
    }
    let results: Vec<(RunLog64, ReplicationSummary)> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let lc = cfg.learner_config(seed, i as u64, m)?;
            let mut oracle = TrustOracle::new(env.true_p.clone(), seed, i as u64)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            let log = learner::run(env, &mut oracle, &lc)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            if let Some(dir) = out {
                let path = shard_path(dir, i);
                std::fs::write(&path, jsonl::to_string(&log))
                    .map_err(|e| CliError::io(&path, e))?;
            }
            let summary = summarize(i, &log, env, &reference, &ref_labels)?;
            Ok((log, summary))
        })
        .collect::<Result<_, CliError>>()?;
    let (logs, runs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = ExperimentReport {
        seed,
        replications,
        aggregate: aggregate(&runs, m),
        reference,
        runs,
    };
    Ok(Experiment { logs, report })
}
