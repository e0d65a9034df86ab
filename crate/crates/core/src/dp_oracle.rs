//! Exact finite-horizon evaluation at toy sizes.
//!
//! The horizon cost is `(S/N)(1 - S/N)` with `S` the number of ones among the
//! `N` observations. Its expansion `N S - S^2 = sum_i S_i` splits into stage
//! costs `S_i = N y_i - y_i^2 - 2 y_i sum_{j<i} y_j`, each depending only on
//! observations already made, so the decision taken at stage `i` never enters
//! `S_i`.
//!
//! Optimizing over history-dependent policies is out of reach even here, so
//! the exhaustive search covers stationary deterministic policies. That is an
//! upper bound on the true optimum, and it already knows the true `p`, which
//! the greedy learner does not.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::CellStatistics;
use crate::markov::{self, build_joint, joint_index, joint_state, MarkovError, PolicyTable};
use crate::oracle::{substream, StreamPurpose};
use crate::policy::minimizers;
use crate::Scalar;

pub const MAX_HORIZON: usize = 14;
pub const MAX_CELLS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("empty observation sequence")]
    Empty,
    #[error("outside the enumeration budget (N <= {MAX_HORIZON}, m <= {MAX_CELLS}): N = {horizon}, m = {cells}")]
    BudgetExceeded { horizon: usize, cells: usize },
    #[error("initial distribution must have {expected} entries summing to 1")]
    BadInitial { expected: usize },
    #[error("need at least one Monte Carlo run")]
    NoRuns,
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Stage costs of one observation sequence; they sum to `N S - S^2`.
pub fn stage_costs(y: &[bool]) -> Result<Vec<i64>, DpError> {
    if y.is_empty() {
        return Err(DpError::Empty);
    }
    let n = y.len() as i64;
    let mut prior = 0i64;
    Ok(y.iter()
        .map(|&b| {
            let yi = i64::from(b);
            let s = n * yi - yi * yi - 2 * yi * prior;
            prior += yi;
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec<T> {
    pub horizon: usize,
    pub p: Vec<T>,
    /// Law of the first `(cell, observation)` pair in joint ordering.
    pub initial: Vec<T>,
}

impl<T: Scalar> HorizonSpec<T> {
    /// First cell uniform, first observation drawn at it.
    pub fn uniform_start(horizon: usize, p: Vec<T>) -> Self {
        let m = p.len();
        let w = T::one() / T::of(m as f64);
        let mut initial = vec![T::zero(); 2 * m];
        for (k, &pk) in p.iter().enumerate() {
            initial[joint_index(m, k, true)] = w * pk;
            initial[joint_index(m, k, false)] = w * (T::one() - pk);
        }
        Self {
            horizon,
            p,
            initial,
        }
    }

    pub fn cells(&self) -> usize {
        self.p.len()
    }

    pub fn check(&self) -> Result<(), DpError> {
        let m = self.cells();
        if self.horizon == 0 || self.horizon > MAX_HORIZON || m == 0 || m > MAX_CELLS {
            return Err(DpError::BudgetExceeded {
                horizon: self.horizon,
                cells: m,
            });
        }
        let sum = self.initial.iter().fold(T::zero(), |a, &b| a + b);
        if self.initial.len() != 2 * m
            || self.initial.iter().any(|&x| x.is_nan() || x < T::zero())
            || (sum - T::one()).abs() > T::of(1e-9)
        {
            return Err(DpError::BadInitial { expected: 2 * m });
        }
        if let Some(cell) = self
            .p
            .iter()
            .position(|&x| !(x >= T::zero() && x <= T::one()))
        {
            return Err(MarkovError::BadProbability { cell }.into());
        }
        Ok(())
    }
}

fn horizon_cost<T: Scalar>(s: usize, n: usize) -> T {
    let f = T::of(s as f64 / n as f64);
    f * (T::one() - f)
}

/// Expected `(S/N)(1 - S/N)` of a stationary policy.
///
/// Marginalizes the path sum over `(joint state, running S)`; this is the
/// same sum as enumerating all `(2m)^N` paths, grouped by shared prefixes.
pub fn exact_expected_cost<T: Scalar>(
    policy: &PolicyTable<T>,
    spec: &HorizonSpec<T>,
) -> Result<T, DpError> {
    spec.check()?;
    let m = spec.cells();
    if policy.cell_count() != m {
        return Err(MarkovError::Dimension {
            expected: m,
            got: policy.cell_count(),
        }
        .into());
    }
    let joint = build_joint(policy, &spec.p)?;
    let n = spec.horizon;
    let states = 2 * m;
    // mass[state * (n + 1) + s]
    let mut mass = vec![T::zero(); states * (n + 1)];
    for st in 0..states {
        let s = usize::from(joint_state(m, st).1);
        mass[st * (n + 1) + s] = spec.initial[st];
    }
    for _ in 1..n {
        let mut next = vec![T::zero(); states * (n + 1)];
        for from in 0..states {
            for s in 0..n {
                let w = mass[from * (n + 1) + s];
                if w == T::zero() {
                    continue;
                }
                for to in 0..states {
                    let t = joint.matrix.get(from, to);
                    if t == T::zero() {
                        continue;
                    }
                    let s2 = s + usize::from(joint_state(m, to).1);
                    next[to * (n + 1) + s2] = next[to * (n + 1) + s2] + w * t;
                }
            }
        }
        mass = next;
    }
    let mut cost = T::zero();
    for st in 0..states {
        for s in 0..=n {
            cost = cost + mass[st * (n + 1) + s] * horizon_cost::<T>(s, n);
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPolicy<T> {
    /// `choice[joint_index(k, u)]` is the cell chosen after observing `u` at `k`.
    pub choice: Vec<usize>,
    pub policy: PolicyTable<T>,
    pub cost: T,
}

/// Exhaustive minimum over all `m^(2m)` deterministic stationary policies.
/// Ties go to the first policy in lexicographic order of `choice`.
pub fn optimal_stationary_cost<T: Scalar>(
    spec: &HorizonSpec<T>,
) -> Result<OptimalPolicy<T>, DpError> {
    spec.check()?;
    let m = spec.cells();
    let states = 2 * m;
    let total = m.pow(states as u32);
    let decode = |mut code: usize| {
        let mut choice = vec![0; states];
        for c in choice.iter_mut().rev() {
            *c = code % m;
            code /= m;
        }
        choice
    };
    let costs: Vec<T> = (0..total)
        .into_par_iter()
        .map(|code| {
            let policy = PolicyTable::deterministic(m, &decode(code));
            exact_expected_cost(&policy, spec)
        })
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let choice = decode(best);
    Ok(OptimalPolicy {
        policy: PolicyTable::deterministic(m, &choice),
        choice,
        cost: costs[best],
    })
}

/// The observation-independent policy that jumps to the minimizers of the
/// true `p(1 - p)`, uniform over ties.
pub fn greedy_true_policy<T: Scalar>(p: &[T]) -> Result<PolicyTable<T>, DpError> {
    let m = p.len();
    let all: Vec<usize> = (0..m).collect();
    let tied = minimizers(&all, p, T::of(1e-9)).map_err(|_| DpError::Empty)?;
    let w = T::one() / T::of(tied.len() as f64);
    let mut rows = markov::SquareMatrix::zeros(m);
    for k in 0..m {
        for &l in &tied {
            rows.set(k, l, w);
        }
    }
    Ok(PolicyTable::observation_independent(rows)?)
}

const GREEDY_TIE_TOL: f64 = 1e-9;

/// Exact expected cost of the greedy learner that plugs running estimates
/// into the one-step rule (unvisited cells at the 0.5 prior), by recursion
/// over every observation sequence and tie branch.
pub fn greedy_exact_cost<T: Scalar>(spec: &HorizonSpec<T>) -> Result<T, DpError> {
    spec.check()?;
    let m = spec.cells();
    let mut total = T::zero();
    for st in 0..2 * m {
        let w = spec.initial[st];
        if w == T::zero() {
            continue;
        }
        let (cell, y) = joint_state(m, st);
        let mut stats = vec![CellStatistics::new(0); m];
        stats[cell].record_observation(y);
        total = total + w * greedy_branch(spec, &stats, usize::from(y), 1);
    }
    Ok(total)
}

fn greedy_branch<T: Scalar>(
    spec: &HorizonSpec<T>,
    stats: &[CellStatistics],
    s: usize,
    done: usize,
) -> T {
    let n = spec.horizon;
    if done == n {
        return horizon_cost(s, n);
    }
    let m = stats.len();
    let all: Vec<usize> = (0..m).collect();
    let est: Vec<T> = stats.iter().map(CellStatistics::estimate).collect();
    let tied = minimizers(&all, &est, T::of(GREEDY_TIE_TOL)).expect("nonempty");
    let share = T::one() / T::of(tied.len() as f64);
    let mut acc = T::zero();
    for &l in &tied {
        let pl = spec.p[l];
        for (y, w) in [(true, pl), (false, T::one() - pl)] {
            if w == T::zero() {
                continue;
            }
            let mut next = stats.to_vec();
            next[l].record_observation(y);
            acc = acc + share * w * greedy_branch(spec, &next, s + usize::from(y), done + 1);
        }
    }
    acc
}

/// Realized cost of one simulated greedy run.
pub fn simulate_greedy<T: Scalar, R: Rng + ?Sized>(spec: &HorizonSpec<T>, rng: &mut R) -> T {
    let m = spec.cells();
    let all: Vec<usize> = (0..m).collect();
    let (mut cell, mut y) = joint_state(m, markov::sample_index(&spec.initial, rng));
    let mut stats = vec![CellStatistics::new(0); m];
    let mut s = 0;
    for step in 0..spec.horizon {
        if step > 0 {
            let est: Vec<T> = stats.iter().map(CellStatistics::estimate).collect();
            let tied = minimizers(&all, &est, T::of(GREEDY_TIE_TOL)).expect("nonempty");
            cell = tied[if tied.len() == 1 {
                0
            } else {
                rng.gen_range(0..tied.len())
            }];
            y = rng.gen_bool(spec.p[cell].to_f64_lossy());
        }
        stats[cell].record_observation(y);
        s += usize::from(y);
    }
    horizon_cost(s, spec.horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyGapReport {
    pub horizon: usize,
    pub cells: usize,
    pub runs: usize,
    pub optimal_choice: Vec<usize>,
    pub optimal_cost: f64,
    pub greedy_exact_cost: f64,
    pub greedy_mean_cost: f64,
    pub greedy_std_error: f64,
    /// `greedy_mean_cost - optimal_cost`.
    pub gap: f64,
    /// `greedy_exact_cost - optimal_cost`.
    pub exact_gap: f64,
    /// `gap >= -3 * greedy_std_error`.
    pub within_band: bool,
}

pub fn greedy_gap<T: Scalar>(
    spec: &HorizonSpec<T>,
    runs: usize,
    seed: u64,
) -> Result<GreedyGapReport, DpError> {
    if runs == 0 {
        return Err(DpError::NoRuns);
    }
    let opt = optimal_stationary_cost(spec)?;
    let exact = greedy_exact_cost(spec)?.to_f64_lossy();
    let costs: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64, StreamPurpose::Auxiliary);
            simulate_greedy(spec, &mut rng).to_f64_lossy()
        })
        .collect();
    let n = runs as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let se = if runs > 1 {
        (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let optimal = opt.cost.to_f64_lossy();
    Ok(GreedyGapReport {
        horizon: spec.horizon,
        cells: spec.cells(),
        runs,
        optimal_choice: opt.choice,
        optimal_cost: optimal,
        greedy_exact_cost: exact,
        greedy_mean_cost: mean,
        greedy_std_error: se,
        gap: mean - optimal,
        exact_gap: exact - optimal,
        within_band: mean - optimal >= -3.0 * se,
    })
}
