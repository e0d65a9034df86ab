//! The active learning loop and its replayable log.
//!
//! Each iteration observes the oracle at the current cell, updates that
//! cell's statistics, retires it if either elimination rule fires, and, while
//! active cells remain, moves to the greedy choice among them. The first
//! observation is taken at the initial cell before any policy decision.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentSpec;
use crate::estimation::{c_measure, CellStatistics, UNVISITED_PRIOR};
use crate::format::{round_sig, REPORT_DIGITS};
use crate::oracle::{substream, OracleError, StreamPurpose, TrustOracle};
use crate::policy::{check_elimination, select_next, EliminationReason, PolicyConfig, PolicyError};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("environment has no cells")]
    NoCells,
    #[error("oracle has {oracle} cells, environment has {env}")]
    OracleMismatch { oracle: usize, env: usize },
    #[error("max_iterations {got} below the floor m * (n_delta + 1) = {floor}")]
    IterationBudget { got: u64, floor: u64 },
    #[error("initial cell {0} out of range")]
    InitialCell(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig<T> {
    pub policy: PolicyConfig<T>,
    /// Master seed; the run draws from its own substream of it.
    pub seed: u64,
    /// Replication index selecting the substream.
    pub stream: u64,
    pub max_iterations: u64,
    /// Zero-based starting cell; uniform over all cells when absent.
    pub initial_cell: Option<usize>,
}

impl<T: Scalar> LearnerConfig<T> {
    /// Config with the default iteration cap `m (N_max + N_delta + 2) 10`.
    pub fn new(policy: PolicyConfig<T>, seed: u64, cells: usize) -> Self {
        Self {
            policy,
            seed,
            stream: 0,
            max_iterations: default_iteration_cap(&policy, cells),
            initial_cell: None,
        }
    }

    pub fn iteration_floor(&self, cells: usize) -> u64 {
        cells as u64 * (self.policy.n_delta as u64 + 1)
    }

    pub fn validate(&self, cells: usize) -> Result<(), LearnerError> {
        self.policy.validate()?;
        let floor = self.iteration_floor(cells);
        if self.max_iterations < floor {
            return Err(LearnerError::IterationBudget {
                got: self.max_iterations,
                floor,
            });
        }
        if let Some(k) = self.initial_cell {
            if k >= cells {
                return Err(LearnerError::InitialCell(k));
            }
        }
        Ok(())
    }
}

pub fn default_iteration_cap<T>(policy: &PolicyConfig<T>, cells: usize) -> u64 {
    cells as u64 * (policy.n_max + policy.n_delta as u64 + 2) * 10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EliminationEvent<T> {
    pub reason: EliminationReason,
    pub c: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub iteration: u64,
    pub cell: usize,
    pub observation: bool,
    /// Estimate of `cell` after this observation.
    pub estimate: T,
    pub elimination: Option<EliminationEvent<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCell<T> {
    pub eliminated_at: Option<u64>,
    pub visits: u64,
    pub successes: u64,
    pub estimate: T,
    pub c: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ActiveSetEmpty,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader<T> {
    pub cells: usize,
    pub config: LearnerConfig<T>,
    /// Estimate the policy sees for cells with no observations yet.
    pub unvisited_prior: T,
    /// Cell the run started in (zero-based).
    pub initial_cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog<T> {
    pub header: RunHeader<T>,
    pub steps: Vec<StepRecord<T>>,
    pub final_cells: Vec<FinalCell<T>>,
    pub terminated: Termination,
}

impl<T: Scalar> RunLog<T> {
    pub fn iterations(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.iteration)
    }

    /// Final estimates `p_{k, n_k}` of every cell.
    pub fn final_estimates(&self) -> Vec<T> {
        self.final_cells.iter().map(|f| f.estimate).collect()
    }

    /// Frozen `c_k`, or `c` of the current estimate for cells never eliminated.
    pub fn final_c(&self) -> Vec<T> {
        self.final_cells
            .iter()
            .map(|f| {
                f.c.unwrap_or_else(|| c_measure(f.estimate).unwrap_or_else(|_| T::nan()))
            })
            .collect()
    }

    /// Order in which cells were eliminated.
    pub fn elimination_order(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.elimination.is_some())
            .map(|s| s.cell)
            .collect()
    }

    /// Number of steps spent in each cell.
    pub fn visit_counts(&self) -> Vec<u64> {
        let mut v = vec![0; self.header.cells];
        for s in &self.steps {
            v[s.cell] += 1;
        }
        v
    }
}

/// Mutable state of one run, shared by [`run`] and [`replay`].
struct Walker<T> {
    config: LearnerConfig<T>,
    stats: Vec<CellStatistics>,
    active: Vec<usize>,
    rng: ChaCha8Rng,
    current: usize,
}

impl<T: Scalar> Walker<T> {
    fn new(cells: usize, config: LearnerConfig<T>) -> Self {
        let mut rng = substream(config.seed, config.stream, StreamPurpose::Policy);
        let current = config
            .initial_cell
            .unwrap_or_else(|| rng.gen_range(0..cells));
        Self {
            config,
            stats: vec![CellStatistics::new(config.policy.n_delta); cells],
            active: (0..cells).collect(),
            rng,
            current,
        }
    }

    /// Applies one observation at the current cell; returns the step record.
    fn absorb(&mut self, iteration: u64, y: bool) -> StepRecord<T> {
        let k = self.current;
        let st = &mut self.stats[k];
        st.record_observation(y);
        st.consecutive_stay += 1;
        let decision = check_elimination(st, &self.config.policy);
        let elimination = decision.eliminate.then(|| {
            st.eliminate(iteration);
            self.active.retain(|&a| a != k);
            EliminationEvent {
                reason: decision.reason,
                c: c_measure(st.estimate::<T>()).expect("estimate in [0, 1]"),
            }
        });
        StepRecord {
            iteration,
            cell: k,
            observation: y,
            estimate: self.stats[k].estimate(),
            elimination,
        }
    }

    fn advance(&mut self) -> Result<(), PolicyError> {
        let estimates: Vec<T> = self.stats.iter().map(CellStatistics::estimate).collect();
        let next = select_next(&self.active, &estimates, &self.config.policy, &mut self.rng)?;
        if next != self.current {
            self.stats[self.current].consecutive_stay = 0;
            self.current = next;
        }
        Ok(())
    }

    fn final_cells(&self) -> Vec<FinalCell<T>> {
        self.stats
            .iter()
            .map(|s| FinalCell {
                eliminated_at: s.eliminated_at,
                visits: s.visits,
                successes: s.successes,
                estimate: s.estimate(),
                c: s.eliminated_at
                    .map(|_| c_measure(s.estimate::<T>()).expect("in range")),
            })
            .collect()
    }
}

pub fn run<T: Scalar>(
    env: &EnvironmentSpec<T>,
    oracle: &mut TrustOracle<T>,
    config: &LearnerConfig<T>,
) -> Result<RunLog<T>, LearnerError> {
    let m = env.cell_count();
    if m == 0 {
        return Err(LearnerError::NoCells);
    }
    if oracle.cell_count() != m {
        return Err(LearnerError::OracleMismatch {
            oracle: oracle.cell_count(),
            env: m,
        });
    }
    config.validate(m)?;
    let mut w = Walker::new(m, *config);
    let header = RunHeader {
        cells: m,
        config: *config,
        unvisited_prior: T::of(UNVISITED_PRIOR),
        initial_cell: w.current,
    };
    let mut steps = Vec::new();
    let mut n = 1u64;
    let terminated = loop {
        let y = oracle.observe(w.current)?;
        steps.push(w.absorb(n, y));
        if w.active.is_empty() {
            break Termination::ActiveSetEmpty;
        }
        if n >= config.max_iterations {
            break Termination::IterationCap;
        }
        w.advance()?;
        n += 1;
    };
    Ok(RunLog {
        header,
        final_cells: w.final_cells(),
        steps,
        terminated,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("malformed log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps_checked: usize,
    pub first_divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn verified(&self) -> bool {
        self.first_divergence.is_none()
    }
}

fn same<T: Scalar>(a: T, b: T) -> bool {
    round_sig(a.to_f64_lossy(), REPORT_DIGITS) == round_sig(b.to_f64_lossy(), REPORT_DIGITS)
}

fn check_shape<T: Scalar>(log: &RunLog<T>, cells: usize) -> Result<(), ReplayError> {
    let bad = |s: String| Err(ReplayError::Malformed(s));
    if log.header.cells != cells {
        return bad(format!(
            "log has {} cells, environment {cells}",
            log.header.cells
        ));
    }
    if log.steps.is_empty() {
        return bad("no steps".into());
    }
    for (i, s) in log.steps.iter().enumerate() {
        if s.iteration != i as u64 + 1 {
            return bad(format!("step {} has iteration {}", i + 1, s.iteration));
        }
        if s.cell >= cells {
            return bad(format!("iteration {} names cell {}", s.iteration, s.cell));
        }
    }
    if log.final_cells.len() != cells {
        return bad(format!(
            "final summary covers {} cells, expected {cells}",
            log.final_cells.len()
        ));
    }
    let eliminations = log.steps.iter().filter(|s| s.elimination.is_some()).count();
    match log.terminated {
        Termination::ActiveSetEmpty if eliminations != cells => bad(format!(
            "terminated with empty active set after {eliminations} of {cells} eliminations"
        )),
        Termination::IterationCap if log.iterations() != log.header.config.max_iterations => {
            bad("iteration cap status before reaching the cap".into())
        }
        _ => Ok(()),
    }
}

/// Re-derives every estimate, elimination and move from the logged
/// observations and the logged configuration.
pub fn replay<T: Scalar>(
    log: &RunLog<T>,
    env: &EnvironmentSpec<T>,
    config: &LearnerConfig<T>,
) -> Result<ReplayReport, ReplayError> {
    let m = env.cell_count();
    check_shape(log, m)?;
    let diverge = |iteration: u64, detail: String, checked: usize| ReplayReport {
        steps_checked: checked,
        first_divergence: Some(Divergence { iteration, detail }),
    };
    if log.header.config != *config {
        return Ok(diverge(
            0,
            "configuration differs from the logged one".into(),
            0,
        ));
    }
    let mut w = Walker::new(m, *config);
    if w.current != log.header.initial_cell {
        return Ok(diverge(0, "initial cell differs".into(), 0));
    }
    let last = log.steps.len() - 1;
    for (i, logged) in log.steps.iter().enumerate() {
        let n = logged.iteration;
        if logged.cell != w.current {
            return Ok(diverge(
                n,
                format!(
                    "expected cell {}, log has {}",
                    w.current + 1,
                    logged.cell + 1
                ),
                i,
            ));
        }
        let rec = w.absorb(n, logged.observation);
        if !same(rec.estimate, logged.estimate) {
            return Ok(diverge(
                n,
                format!(
                    "estimate {} recomputed as {}",
                    logged.estimate, rec.estimate
                ),
                i,
            ));
        }
        match (&rec.elimination, &logged.elimination) {
            (None, None) => {}
            (Some(a), Some(b)) if a.reason == b.reason && same(a.c, b.c) => {}
            (a, b) => {
                return Ok(diverge(
                    n,
                    format!("elimination {:?} recomputed as {:?}", b, a),
                    i,
                ))
            }
        }
        if w.active.is_empty() {
            if i != last {
                return Ok(diverge(
                    n,
                    "active set empty before the log ends".into(),
                    i + 1,
                ));
            }
            break;
        }
        if i == last {
            if log.terminated != Termination::IterationCap {
                return Ok(diverge(
                    n,
                    "log ends with active cells remaining".into(),
                    i + 1,
                ));
            }
            break;
        }
        if w.advance().is_err() {
            return Ok(diverge(n, "selection failed".into(), i + 1));
        }
    }
    let recomputed = w.final_cells();
    for (k, (a, b)) in recomputed.iter().zip(&log.final_cells).enumerate() {
        let c_same = match (a.c, b.c) {
            (None, None) => true,
            (Some(x), Some(y)) => same(x, y),
            _ => false,
        };
        if a.eliminated_at != b.eliminated_at
            || a.visits != b.visits
            || a.successes != b.successes
            || !same(a.estimate, b.estimate)
            || !c_same
        {
            return Ok(diverge(
                log.iterations(),
                format!("final summary of cell {} differs", k + 1),
                log.steps.len(),
            ));
        }
    }
    Ok(ReplayReport {
        steps_checked: log.steps.len(),
        first_divergence: None,
    })
}

/// Line-delimited JSON encoding of a run log: one header line, one line per
/// iteration, one closing summary line. Cells are one-based in the file and
/// reals carry 12 significant digits.
pub mod jsonl {
    use super::*;
    use crate::policy::PolicyConfig;

    #[derive(Debug, Serialize, Deserialize)]
    #[serde(tag = "record", rename_all = "snake_case")]
    enum Line {
        Header {
            cells: usize,
            seed: u64,
            stream: u64,
            delta: f64,
            n_delta: usize,
            n_max: u64,
            tie_tolerance: f64,
            max_iterations: u64,
            configured_initial_cell: Option<usize>,
            initial_cell: usize,
            unvisited_prior: f64,
        },
        Step {
            n: u64,
            cell: usize,
            y: u8,
            estimate: f64,
            #[serde(default, skip_serializing_if = "Option::is_none")]
            eliminated: Option<EliminationReason>,
            #[serde(default, skip_serializing_if = "Option::is_none")]
            c: Option<f64>,
        },
        Final {
            terminated: Termination,
            cells: Vec<FinalLine>,
        },
    }

    #[derive(Debug, Serialize, Deserialize)]
    struct FinalLine {
        cell: usize,
        n_k: Option<u64>,
        visits: u64,
        successes: u64,
        estimate: f64,
        c: Option<f64>,
    }

    fn r(x: f64) -> f64 {
        round_sig(x, REPORT_DIGITS)
    }

    pub fn to_string(log: &RunLog<f64>) -> String {
        let h = &log.header;
        let mut lines = Vec::with_capacity(log.steps.len() + 2);
        lines.push(Line::Header {
            cells: h.cells,
            seed: h.config.seed,
            stream: h.config.stream,
            delta: r(h.config.policy.delta),
            n_delta: h.config.policy.n_delta,
            n_max: h.config.policy.n_max,
            tie_tolerance: r(h.config.policy.tie_tolerance),
            max_iterations: h.config.max_iterations,
            configured_initial_cell: h.config.initial_cell.map(|k| k + 1),
            initial_cell: h.initial_cell + 1,
            unvisited_prior: h.unvisited_prior,
        });
        for s in &log.steps {
            lines.push(Line::Step {
                n: s.iteration,
                cell: s.cell + 1,
                y: u8::from(s.observation),
                estimate: r(s.estimate),
                eliminated: s.elimination.map(|e| e.reason),
                c: s.elimination.map(|e| r(e.c)),
            });
        }
        lines.push(Line::Final {
            terminated: log.terminated,
            cells: log
                .final_cells
                .iter()
                .enumerate()
                .map(|(k, f)| FinalLine {
                    cell: k + 1,
                    n_k: f.eliminated_at,
                    visits: f.visits,
                    successes: f.successes,
                    estimate: r(f.estimate),
                    c: f.c.map(r),
                })
                .collect(),
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("log lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_str(text: &str) -> Result<RunLog<f64>, ReplayError> {
        let bad = |s: String| ReplayError::Malformed(s);
        let mut header = None;
        let mut steps = Vec::new();
        let mut fin = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            if fin.is_some() {
                return Err(bad(format!("line {} follows the final record", i + 1)));
            }
            let line: Line =
                serde_json::from_str(raw).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            match line {
                Line::Header {
                    cells,
                    seed,
                    stream,
                    delta,
                    n_delta,
                    n_max,
                    tie_tolerance,
                    max_iterations,
                    configured_initial_cell,
                    initial_cell,
                    unvisited_prior,
                } => {
                    if header.is_some() || i != 0 {
                        return Err(bad("header must be the first and only header line".into()));
                    }
                    if initial_cell == 0 || configured_initial_cell == Some(0) {
                        return Err(bad("cells are numbered from 1".into()));
                    }
                    header = Some(RunHeader {
                        cells,
                        config: LearnerConfig {
                            policy: PolicyConfig {
                                delta,
                                n_delta,
                                n_max,
                                tie_tolerance,
                            },
                            seed,
                            stream,
                            max_iterations,
                            initial_cell: configured_initial_cell.map(|k| k - 1),
                        },
                        unvisited_prior,
                        initial_cell: initial_cell - 1,
                    });
                }
                Line::Step {
                    n,
                    cell,
                    y,
                    estimate,
                    eliminated,
                    c,
                } => {
                    if header.is_none() {
                        return Err(bad("step before header".into()));
                    }
                    if cell == 0 || y > 1 {
                        return Err(bad(format!("line {}: bad cell or observation", i + 1)));
                    }
                    let elimination = match (eliminated, c) {
                        (Some(reason), Some(c)) => Some(EliminationEvent { reason, c }),
                        (None, None) => None,
                        _ => return Err(bad(format!("line {}: partial elimination", i + 1))),
                    };
                    steps.push(StepRecord {
                        iteration: n,
                        cell: cell - 1,
                        observation: y == 1,
                        estimate,
                        elimination,
                    });
                }
                Line::Final { terminated, cells } => {
                    let mut out = Vec::with_capacity(cells.len());
                    for (k, f) in cells.into_iter().enumerate() {
                        if f.cell != k + 1 {
                            return Err(bad("final cells out of order".into()));
                        }
                        out.push(FinalCell {
                            eliminated_at: f.n_k,
                            visits: f.visits,
                            successes: f.successes,
                            estimate: f.estimate,
                            c: f.c,
                        });
                    }
                    fin = Some((terminated, out));
                }
            }
        }
        let header = header.ok_or_else(|| bad("missing header".into()))?;
        let (terminated, final_cells) =
            fin.ok_or_else(|| bad("missing final record (truncated log)".into()))?;
        Ok(RunLog {
            header,
            steps,
            final_cells,
            terminated,
        })
    }
}
