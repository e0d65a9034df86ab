//! Subcommand bodies. Each returns the text written to stdout so the binary
//! and the tests share one code path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use safescout::classifier::{classify, Label, ThresholdRoute};
use safescout::dp_oracle::{greedy_gap, GreedyGapReport, HorizonSpec};
use safescout::format::{fmt_sig, round_sig, MATRIX_DIGITS, REPORT_DIGITS};
use safescout::ldp::{effective_p, rate_curve};
use safescout::learner::Termination;
use safescout::markov::{
    build_joint, build_reduced, joint_index, verify_lift, PolicyTable, SquareMatrix,
};
use serde::{Deserialize, Serialize};

use crate::config::{read_input, resolve_environment, resolve_seed, ExperimentConfig};
use crate::error::CliError;
use crate::experiment::run_experiment;

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Writes `body` to `out` when given, otherwise hands it back for stdout.
fn emit(out: Option<&Path>, body: String) -> Result<String, CliError> {
    match out {
        Some(path) => {
            write_file(path, &body)?;
            Ok(String::new())
        }
        None => Ok(body),
    }
}

fn to_json<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- simulate

pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Runs the batch and writes `config.toml`, `report.json` and one
/// `runs/run-NNNN.jsonl` per replication. Returns the stdout summary and the
/// number of replications that hit the iteration cap; artifacts are written
/// either way.
pub fn simulate(args: &SimulateArgs) -> Result<(String, usize), CliError> {
    let (mut cfg, base) = ExperimentConfig::load(args.config.as_deref())?;
    let env = resolve_environment(&cfg.environment, &base)?;
    let seed = resolve_seed(args.seed, cfg.seed);
    let replications = args.replications.unwrap_or(cfg.replications);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| base.join(o)))
        .unwrap_or_else(|| PathBuf::from("safescout-out"));
    let exp = run_experiment(&cfg, &env, seed, replications, Some(&out))?;

    // The stored config reproduces the batch without flags or env vars.
    cfg.seed = Some(seed);
    cfg.replications = replications;
    cfg.output = None;
    cfg.environment = crate::config::EnvironmentSource::Inline(env);
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(&out.join("report.json"), &exp.report.to_json())?;

    let rep = &exp.report;
    let agg = &rep.aggregate;
    let mut s = String::new();
    writeln!(s, "seed {seed}, {replications} replication(s)").unwrap();
    writeln!(s, "reference safe set {:?}", rep.reference.safe_set).unwrap();
    writeln!(
        s,
        "run   termination       iterations  c_T           safe set"
    )
    .unwrap();
    for r in &rep.runs {
        let term = match r.termination {
            Termination::ActiveSetEmpty => "active_set_empty",
            Termination::IterationCap => "iteration_cap",
        };
        writeln!(
            s,
            "{:<5} {:<17} {:<11} {:<13} {:?}",
            r.replication,
            term,
            r.iterations,
            fmt_sig(r.c_threshold, 6),
            r.safe_set
        )
        .unwrap();
    }
    writeln!(
        s,
        "label agreement {}, exact safe set {}, |error| <= {} in {}",
        fmt_sig(agg.mean_label_agreement, 6),
        fmt_sig(agg.exact_safe_set_rate, 6),
        agg.error_tolerance,
        fmt_sig(agg.within_tolerance, 6)
    )
    .unwrap();
    writeln!(s, "wrote {}", out.join("report.json").display()).unwrap();
    Ok((s, agg.iteration_cap_hits))
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Deserialize)]
struct ClassifyRow {
    cell: usize,
    c: f64,
    p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedCell {
    pub cell: usize,
    pub c: f64,
    pub p: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub c_threshold: f64,
    pub route: ThresholdRoute,
    pub k_star: usize,
    /// Cell ids in ascending order of `c`.
    pub sorted_cells: Vec<usize>,
    pub gaps: Vec<f64>,
    pub cells: Vec<ClassifiedCell>,
    pub safe_set: Vec<usize>,
}

pub fn classify_csv(text: &str) -> Result<ClassifyReport, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let rows: Vec<ClassifyRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let mut ids: Vec<usize> = rows.iter().map(|r| r.cell).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Invalid("duplicate cell id".into()));
    }
    let c: Vec<f64> = rows.iter().map(|r| r.c).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.p).collect();
    let res = classify(&c, &p).map_err(|e| CliError::Invalid(e.to_string()))?;
    let r = |x: f64| round_sig(x, REPORT_DIGITS);
    Ok(ClassifyReport {
        c_threshold: r(res.c_threshold),
        route: res.route,
        k_star: res.k_star,
        sorted_cells: res.sort_order.iter().map(|&k| rows[k].cell).collect(),
        gaps: res.gaps.iter().map(|&g| r(g)).collect(),
        cells: rows
            .iter()
            .zip(&res.labels)
            .map(|(row, &label)| ClassifiedCell {
                cell: row.cell,
                c: r(row.c),
                p: r(row.p),
                label,
            })
            .collect(),
        safe_set: res.safe_set.iter().map(|&k| rows[k].cell).collect(),
    })
}

/// Prints the threshold and labels; the full result goes to `out` as JSON.
pub fn classify_cmd(input: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let report = classify_csv(&read_input(input)?)?;
    if let Some(path) = out {
        write_file(path, &to_json(&report))?;
    }
    let mut s = String::new();
    let route = match report.route {
        ThresholdRoute::Gap => "gap",
        ThresholdRoute::Median => "median",
    };
    writeln!(
        s,
        "c_T {} (route {route}, k* {})",
        fmt_sig(report.c_threshold, REPORT_DIGITS),
        report.k_star
    )
    .unwrap();
    for c in &report.cells {
        let label = match c.label {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
        };
        writeln!(s, "{} {label}", c.cell).unwrap();
    }
    writeln!(s, "safe set {:?}", report.safe_set).unwrap();
    Ok(s)
}

// -------------------------------------------------------------- rate-curve

pub const DEFAULT_EPS: [f64; 3] = [0.25, 0.5, 0.75];

/// Long-format CSV `eps,p,neg_rate`, `points` rows per epsilon.
pub fn rate_curve_csv(eps: &[f64], points: usize) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eps", "p", "neg_rate"])?;
    for &e in eps {
        let curve =
            rate_curve(e, points).map_err(|err| CliError::Invalid(format!("eps {e}: {err}")))?;
        for (p, v) in curve.grid {
            w.write_record([
                fmt_sig(e, REPORT_DIGITS),
                fmt_sig(p, REPORT_DIGITS),
                fmt_sig(v, REPORT_DIGITS),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory")).expect("ascii"))
}

pub fn rate_curve_cmd(eps: &[f64], points: usize, out: Option<&Path>) -> Result<String, CliError> {
    let eps = if eps.is_empty() {
        &DEFAULT_EPS[..]
    } else {
        eps
    };
    emit(out, rate_curve_csv(eps, points)?)
}

// -------------------------------------------------------------- stationary

/// Lift deviations above this are flagged.
pub const LIFT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub cells: usize,
    /// Joint states as `[cell, observation]`, in matrix order.
    pub joint_states: Vec<(usize, u8)>,
    pub joint_matrix: Vec<Vec<f64>>,
    pub reduced_matrix: Vec<Vec<f64>>,
    pub joint_stationary: Vec<f64>,
    pub reduced_stationary: Vec<f64>,
    pub effective_p: f64,
    pub lift_max_deviation: f64,
    pub lift_within_tolerance: bool,
}

/// Policy CSV: header `cell,y,to_1,...,to_m`, one row per `(cell, y)`.
pub fn parse_policy_csv(text: &str) -> Result<PolicyTable<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let m = rdr.headers()?.len().saturating_sub(2);
    if m == 0 {
        return Err(CliError::Invalid(
            "policy needs columns cell,y,to_1..to_m".into(),
        ));
    }
    let mut one: Vec<Option<Vec<f64>>> = vec![None; m];
    let mut zero: Vec<Option<Vec<f64>>> = vec![None; m];
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| {
            CliError::Invalid(format!(
                "policy row {:?}: {what}",
                rec.iter().collect::<Vec<_>>()
            ))
        };
        let cell: usize = field(0).parse().map_err(|_| bad("cell"))?;
        if cell == 0 || cell > m {
            return Err(bad("cell out of range"));
        }
        let slot = match field(1) {
            "1" => &mut one[cell - 1],
            "0" => &mut zero[cell - 1],
            _ => return Err(bad("y must be 0 or 1")),
        };
        let row: Vec<f64> = (2..2 + m)
            .map(|i| field(i).parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("probability"))?;
        if slot.replace(row).is_some() {
            return Err(bad("duplicate row"));
        }
    }
    let table = |rows: Vec<Option<Vec<f64>>>| {
        let rows: Option<Vec<Vec<f64>>> = rows.into_iter().collect();
        let rows =
            rows.ok_or_else(|| CliError::Invalid("policy is missing a (cell, y) row".into()))?;
        SquareMatrix::from_rows(rows).map_err(|e| CliError::Invalid(e.to_string()))
    };
    PolicyTable::new(table(one)?, table(zero)?).map_err(|e| CliError::Invalid(e.to_string()))
}

/// p CSV: header `cell,p`, cells `1..=m` in any order.
pub fn parse_p_csv(text: &str) -> Result<Vec<f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        cell: usize,
        p: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.cell);
    if rows.iter().enumerate().any(|(i, r)| r.cell != i + 1) {
        return Err(CliError::Invalid(
            "p file must list cells 1..m exactly once".into(),
        ));
    }
    Ok(rows.into_iter().map(|r| r.p).collect())
}

pub fn stationary_report(
    policy: &PolicyTable<f64>,
    p: &[f64],
) -> Result<StationaryReport, CliError> {
    let m = policy.cell_count();
    if p.len() != m {
        return Err(CliError::Invalid(format!(
            "policy has {m} cells, p has {}",
            p.len()
        )));
    }
    let inv = |e: safescout::markov::MarkovError| CliError::Invalid(e.to_string());
    let joint = build_joint(policy, p).map_err(inv)?;
    let reduced = build_reduced(policy, p).map_err(inv)?;
    let lift = verify_lift(policy, p, LIFT_TOLERANCE).map_err(inv)?;
    let eff =
        effective_p(p, &lift.reduced_stationary).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mx = |v: &[f64]| {
        v.iter()
            .map(|&x| round_sig(x, MATRIX_DIGITS))
            .collect::<Vec<_>>()
    };
    let mut joint_states = vec![(0, 0); 2 * m];
    for k in 0..m {
        joint_states[joint_index(m, k, true)] = (k + 1, 1);
        joint_states[joint_index(m, k, false)] = (k + 1, 0);
    }
    Ok(StationaryReport {
        cells: m,
        joint_states,
        joint_matrix: joint.matrix.rows().map(mx).collect(),
        reduced_matrix: reduced.matrix.rows().map(mx).collect(),
        joint_stationary: mx(&lift.joint_stationary),
        reduced_stationary: mx(&lift.reduced_stationary),
        effective_p: round_sig(eff, REPORT_DIGITS),
        lift_max_deviation: round_sig(lift.max_deviation, REPORT_DIGITS),
        lift_within_tolerance: lift.within_tolerance,
    })
}

pub fn stationary_cmd(policy: &Path, p: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let table = parse_policy_csv(&read_input(policy)?)?;
    let p = parse_p_csv(&read_input(p)?)?;
    emit(out, to_json(&stationary_report(&table, &p)?))
}

// -------------------------------------------------------------- dp-compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpCompareConfig {
    pub horizon: usize,
    pub p: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Law of the first `(cell, y)` pair in joint order; uniform start if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

fn default_runs() -> usize {
    100_000
}

impl Default for DpCompareConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            p: vec![0.9, 0.6],
            runs: default_runs(),
            seed: None,
            initial: None,
        }
    }
}

pub fn dp_compare_report(
    cfg: &DpCompareConfig,
    seed: u64,
    runs: usize,
) -> Result<GreedyGapReport, CliError> {
    let mut spec = HorizonSpec::uniform_start(cfg.horizon, cfg.p.clone());
    if let Some(init) = &cfg.initial {
        spec.initial = init.clone();
    }
    let mut rep = greedy_gap(&spec, runs, seed).map_err(|e| CliError::Invalid(e.to_string()))?;
    for x in [
        &mut rep.optimal_cost,
        &mut rep.greedy_exact_cost,
        &mut rep.greedy_mean_cost,
        &mut rep.greedy_std_error,
        &mut rep.gap,
        &mut rep.exact_gap,
    ] {
        *x = round_sig(*x, REPORT_DIGITS);
    }
    Ok(rep)
}

pub fn dp_compare_cmd(
    config: Option<&Path>,
    seed: Option<u64>,
    runs: Option<usize>,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let cfg = match config {
        Some(path) => toml::from_str(&read_input(path)?).map_err(|e: toml::de::Error| {
            CliError::Invalid(format!("dp config: {}", e.message()))
        })?,
        None => DpCompareConfig::default(),
    };
    let seed = resolve_seed(seed, cfg.seed);
    let runs = runs.unwrap_or(cfg.runs);
    emit(out, to_json(&dp_compare_report(&cfg, seed, runs)?))
}
