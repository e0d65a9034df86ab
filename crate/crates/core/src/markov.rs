//! Markov structure of the explored environment.
//!
//! A stationary policy `pi(k, u)[l]` moves the agent from cell `k`, after
//! observing `u`, to cell `l`; the oracle then answers at `l` with
//! probability `p_l`. This induces
//!
//! - a joint chain on the `2m` pairs `(cell, observation)`, ordered with every
//!   `(., 1)` state first and every `(., 0)` state after:
//!   `P[(k,u) -> (l,v)] = pi(k,u)[l] * p_l^v`, where `p^1 = p`, `p^0 = 1 - p`;
//! - its cell marginal `Pbar[k -> l] = p_k pi(k,1)[l] + (1 - p_k) pi(k,0)[l]`.
//!
//! The stationary laws are linked by `pi*(l,1) = p_l pibar_l` and
//! `pi*(l,0) = (1 - p_l) pibar_l`; [`verify_lift`] checks this numerically
//! with both sides solved independently.

#![allow(clippy::needless_range_loop)]

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::rank_tolerance;
use crate::Scalar;

/// Default residual tolerance for [`stationary`].
pub const STATIONARY_TOL: f64 = 1e-12;
/// Row-sum tolerance for stochastic rows.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("probability p_{cell} outside [0, 1]")]
    BadProbability { cell: usize },
    #[error("stationary distribution is not unique (reducible chain)")]
    NonUnique,
    #[error("stationary solve did not reach residual {tol} (got {residual})")]
    NotConverged { residual: f64, tol: f64 },
    #[error("p must lie strictly inside (0, 1)")]
    Boundary,
    #[error("trajectory needs at least 2 states, got {0}")]
    ShortTrajectory(usize),
    #[error("trajectory visits cell {cell} but the chain has {cells} cells")]
    CellOutOfRange { cell: usize, cells: usize },
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, MarkovError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(MarkovError::Dimension {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.n.max(1))
    }

    /// Errors on the first row that is not a probability vector.
    pub fn check_row_stochastic(&self, tol: T) -> Result<(), MarkovError> {
        for (i, r) in self.rows().enumerate() {
            let sum = r.iter().fold(T::zero(), |a, &b| a + b);
            let entries_ok = r.iter().all(|&x| x >= T::zero() && x <= T::one() + tol);
            if !entries_ok || (sum - T::one()).abs() > tol {
                return Err(MarkovError::NotStochastic {
                    row: i,
                    sum: sum.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    /// `x^T M`.
    pub fn left_mul(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (i, r) in self.rows().enumerate() {
            for (o, &a) in out.iter_mut().zip(r) {
                *o = *o + x[i] * a;
            }
        }
        out
    }

    /// `max_j |(x^T M - x^T)_j|`.
    pub fn stationary_residual(&self, x: &[T]) -> T {
        self.left_mul(x)
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

/// Stationary policy `pi(k, u)[l]`, one row-stochastic `m x m` table per
/// observation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable<T> {
    after_one: SquareMatrix<T>,
    after_zero: SquareMatrix<T>,
}

impl<T: Scalar> PolicyTable<T> {
    pub fn new(
        after_one: SquareMatrix<T>,
        after_zero: SquareMatrix<T>,
    ) -> Result<Self, MarkovError> {
        if after_one.size() != after_zero.size() {
            return Err(MarkovError::Dimension {
                expected: after_one.size(),
                got: after_zero.size(),
            });
        }
        let tol = T::of(ROW_SUM_TOL);
        after_one.check_row_stochastic(tol)?;
        after_zero.check_row_stochastic(tol).map_err(|e| match e {
            MarkovError::NotStochastic { row, sum } => MarkovError::NotStochastic {
                row: row + after_one.size(),
                sum,
            },
            e => e,
        })?;
        Ok(Self {
            after_one,
            after_zero,
        })
    }

    /// Policy that ignores the observation.
    pub fn observation_independent(rows: SquareMatrix<T>) -> Result<Self, MarkovError> {
        Self::new(rows.clone(), rows)
    }

    /// Every state moves to `target` with probability one.
    pub fn vertex(m: usize, target: usize) -> Self {
        let mut rows = SquareMatrix::zeros(m);
        for k in 0..m {
            rows.set(k, target, T::one());
        }
        Self {
            after_one: rows.clone(),
            after_zero: rows,
        }
    }

    /// Uniform over all cells from every state.
    pub fn uniform(m: usize) -> Self {
        let w = T::one() / T::of(m as f64);
        let rows = SquareMatrix {
            n: m,
            data: vec![w; m * m],
        };
        Self {
            after_one: rows.clone(),
            after_zero: rows,
        }
    }

    /// Deterministic policy: `choice[joint_index(k, u)]` is the next cell.
    pub fn deterministic(m: usize, choice: &[usize]) -> Self {
        let mut after_one = SquareMatrix::zeros(m);
        let mut after_zero = SquareMatrix::zeros(m);
        for k in 0..m {
            after_one.set(k, choice[joint_index(m, k, true)], T::one());
            after_zero.set(k, choice[joint_index(m, k, false)], T::one());
        }
        Self {
            after_one,
            after_zero,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.after_one.size()
    }

    pub fn get(&self, from: usize, observed: bool, to: usize) -> T {
        self.table(observed).get(from, to)
    }

    pub fn row(&self, from: usize, observed: bool) -> &[T] {
        self.table(observed).row(from)
    }

    pub fn table(&self, observed: bool) -> &SquareMatrix<T> {
        if observed {
            &self.after_one
        } else {
            &self.after_zero
        }
    }
}

/// Position of `(cell, observed)` in the joint state ordering.
pub fn joint_index(m: usize, cell: usize, observed: bool) -> usize {
    if observed {
        cell
    } else {
        m + cell
    }
}

/// Inverse of [`joint_index`].
pub fn joint_state(m: usize, index: usize) -> (usize, bool) {
    if index < m {
        (index, true)
    } else {
        (index - m, false)
    }
}

fn check_probabilities<T: Scalar>(m: usize, p: &[T]) -> Result<(), MarkovError> {
    if p.len() != m {
        return Err(MarkovError::Dimension {
            expected: m,
            got: p.len(),
        });
    }
    match p.iter().position(|&x| !(x >= T::zero() && x <= T::one())) {
        Some(cell) => Err(MarkovError::BadProbability { cell }),
        None => Ok(()),
    }
}

/// The `2m x 2m` chain on `(cell, observation)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTransitionMatrix<T> {
    pub cells: usize,
    pub matrix: SquareMatrix<T>,
}

/// The `m x m` cell-marginal chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedTransitionMatrix<T> {
    pub matrix: SquareMatrix<T>,
}

pub fn build_joint<T: Scalar>(
    policy: &PolicyTable<T>,
    p: &[T],
) -> Result<JointTransitionMatrix<T>, MarkovError> {
    let m = policy.cell_count();
    check_probabilities(m, p)?;
    let mut matrix = SquareMatrix::zeros(2 * m);
    for k in 0..m {
        for u in [true, false] {
            let from = joint_index(m, k, u);
            for l in 0..m {
                let go = policy.get(k, u, l);
                matrix.set(from, joint_index(m, l, true), go * p[l]);
                matrix.set(from, joint_index(m, l, false), go * (T::one() - p[l]));
            }
        }
    }
    Ok(JointTransitionMatrix { cells: m, matrix })
}

pub fn build_reduced<T: Scalar>(
    policy: &PolicyTable<T>,
    p: &[T],
) -> Result<ReducedTransitionMatrix<T>, MarkovError> {
    let m = policy.cell_count();
    check_probabilities(m, p)?;
    let mut matrix = SquareMatrix::zeros(m);
    for k in 0..m {
        for l in 0..m {
            let v = p[k] * policy.get(k, true, l) + (T::one() - p[k]) * policy.get(k, false, l);
            matrix.set(k, l, v);
        }
    }
    Ok(ReducedTransitionMatrix { matrix })
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves `(M^T - I) x = 0` stacked with `1^T x = 1` by Gaussian elimination
/// with partial pivoting. If the stacked system is rank deficient, lazy power
/// iteration is run from every basis vector: agreeing limits are returned,
/// disagreeing ones mean the chain has several closed classes.
pub fn stationary<T: Scalar>(matrix: &SquareMatrix<T>, tol: T) -> Result<Vec<T>, MarkovError> {
    matrix.check_row_stochastic(T::of(ROW_SUM_TOL).max(tol))?;
    let n = matrix.size();
    if n == 0 {
        return Err(MarkovError::Dimension {
            expected: 1,
            got: 0,
        });
    }
    let x = match direct_solve(matrix) {
        Some(x) => x,
        None => power_fallback(matrix, tol)?,
    };
    let x = clean_simplex(x);
    let residual = matrix.stationary_residual(&x);
    if residual > tol {
        return Err(MarkovError::NotConverged {
            residual: residual.to_f64_lossy(),
            tol: tol.to_f64_lossy(),
        });
    }
    Ok(x)
}

fn direct_solve<T: Scalar>(matrix: &SquareMatrix<T>) -> Option<Vec<T>> {
    let n = matrix.size();
    let rows = n + 1;
    let cols = n + 1; // last column is the right-hand side
    let mut a = vec![T::zero(); rows * cols];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { T::one() } else { T::zero() };
            a[i * cols + j] = matrix.get(j, i) - delta;
        }
    }
    for j in 0..n {
        a[n * cols + j] = T::one();
    }
    a[n * cols + n] = T::one();

    let floor = rank_tolerance::<T>(n);
    for col in 0..n {
        let pivot = (col..rows)
            .max_by(|&r1, &r2| {
                a[r1 * cols + col]
                    .abs()
                    .partial_cmp(&a[r2 * cols + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty pivot range");
        if a[pivot * cols + col].abs() < floor {
            return None;
        }
        if pivot != col {
            for j in 0..cols {
                a.swap(pivot * cols + j, col * cols + j);
            }
        }
        let d = a[col * cols + col];
        for r in (col + 1)..rows {
            let f = a[r * cols + col] / d;
            if f != T::zero() {
                for j in col..cols {
                    a[r * cols + j] = a[r * cols + j] - f * a[col * cols + j];
                }
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = a[i * cols + n];
        for j in (i + 1)..n {
            s = s - a[i * cols + j] * x[j];
        }
        x[i] = s / a[i * cols + i];
    }
    Some(x)
}

fn power_fallback<T: Scalar>(matrix: &SquareMatrix<T>, tol: T) -> Result<Vec<T>, MarkovError> {
    let n = matrix.size();
    let half = T::of(0.5);
    let max_iter = 200_000;
    let mut limits: Vec<Vec<T>> = Vec::with_capacity(n);
    for start in 0..n {
        let mut x = vec![T::zero(); n];
        x[start] = T::one();
        let mut converged = false;
        for _ in 0..max_iter {
            let mx = matrix.left_mul(&x);
            let next: Vec<T> = mx.iter().zip(&x).map(|(&a, &b)| half * (a + b)).collect();
            let change = next
                .iter()
                .zip(&x)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
            x = next;
            if change <= tol * T::of(0.01) {
                converged = true;
                break;
            }
        }
        if !converged {
            let residual = matrix.stationary_residual(&x);
            return Err(MarkovError::NotConverged {
                residual: residual.to_f64_lossy(),
                tol: tol.to_f64_lossy(),
            });
        }
        limits.push(x);
    }
    let agree = T::of(1e-6).max(tol.sqrt());
    let first = &limits[0];
    for other in &limits[1..] {
        let gap = first
            .iter()
            .zip(other)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        if gap > agree {
            return Err(MarkovError::NonUnique);
        }
    }
    Ok(first.clone())
}

/// Zeroes round-off negatives and renormalizes.
fn clean_simplex<T: Scalar>(mut x: Vec<T>) -> Vec<T> {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let s = x.iter().fold(T::zero(), |a, &b| a + b);
    if s > T::zero() {
        for v in x.iter_mut() {
            *v = *v / s;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport<T> {
    pub reduced_stationary: Vec<T>,
    pub joint_stationary: Vec<T>,
    pub max_deviation: T,
    pub within_tolerance: bool,
}

/// Solves both chains independently and measures how far the joint law is
/// from `(p_l pibar_l, (1 - p_l) pibar_l)`.
pub fn verify_lift<T: Scalar>(
    policy: &PolicyTable<T>,
    p: &[T],
    tol: T,
) -> Result<LiftReport<T>, MarkovError> {
    let m = policy.cell_count();
    let solve_tol = T::of(STATIONARY_TOL).max(T::epsilon() * T::of(64.0));
    let reduced = stationary(&build_reduced(policy, p)?.matrix, solve_tol)?;
    let joint = stationary(&build_joint(policy, p)?.matrix, solve_tol)?;
    let mut dev = T::zero();
    for l in 0..m {
        dev = dev.max((joint[joint_index(m, l, true)] - p[l] * reduced[l]).abs());
        dev = dev.max((joint[joint_index(m, l, false)] - (T::one() - p[l]) * reduced[l]).abs());
    }
    Ok(LiftReport {
        reduced_stationary: reduced,
        joint_stationary: joint,
        max_deviation: dev,
        within_tolerance: dev <= tol,
    })
}

/// Closed-form "stay" policy weights `(a, b)` with `p a + (1 - p) b = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayingPolicy<T> {
    pub after_one: T,
    pub after_zero: T,
    /// Both weights are valid probabilities.
    pub valid: bool,
}

pub fn retrieve_staying_policy<T: Scalar>(p: T) -> Result<StayingPolicy<T>, MarkovError> {
    if !(p > T::zero() && p < T::one()) {
        return Err(MarkovError::Boundary);
    }
    let q = T::one() - p;
    let d = p * p + q * q;
    let a = p / d;
    let b = q / d;
    Ok(StayingPolicy {
        after_one: a,
        after_zero: b,
        valid: a <= T::one() && b <= T::one(),
    })
}

/// Counts `eta(k, u, l, v)` of adjacent ordered pairs in a joint trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub cells: usize,
    counts: Vec<u64>,
}

impl TransitionCounts {
    pub fn get(&self, from: (usize, bool), to: (usize, bool)) -> u64 {
        let n = 2 * self.cells;
        self.counts
            [joint_index(self.cells, from.0, from.1) * n + joint_index(self.cells, to.0, to.1)]
    }

    /// Count by joint indices.
    pub fn get_index(&self, from: usize, to: usize) -> u64 {
        self.counts[from * 2 * self.cells + to]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn count_transitions(
    cells: usize,
    trajectory: &[(usize, bool)],
) -> Result<TransitionCounts, MarkovError> {
    if trajectory.len() < 2 {
        return Err(MarkovError::ShortTrajectory(trajectory.len()));
    }
    if let Some(&(cell, _)) = trajectory.iter().find(|(c, _)| *c >= cells) {
        return Err(MarkovError::CellOutOfRange { cell, cells });
    }
    let n = 2 * cells;
    let mut counts = vec![0u64; n * n];
    for w in trajectory.windows(2) {
        let from = joint_index(cells, w[0].0, w[0].1);
        let to = joint_index(cells, w[1].0, w[1].1);
        counts[from * n + to] += 1;
    }
    Ok(TransitionCounts { cells, counts })
}

/// Draws an index from a weight vector summing to one.
pub fn sample_index<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        let w = w.to_f64_lossy();
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Simulates the generative process: move by the policy, then observe at the
/// destination. Returns `steps` joint states starting with `start`.
pub fn simulate_joint<T: Scalar, R: Rng + ?Sized>(
    policy: &PolicyTable<T>,
    p: &[T],
    start: (usize, bool),
    steps: usize,
    rng: &mut R,
) -> Vec<(usize, bool)> {
    let mut out = Vec::with_capacity(steps);
    let mut state = start;
    for _ in 0..steps {
        out.push(state);
        let next = sample_index(policy.row(state.0, state.1), rng);
        let y = rng.gen_bool(p[next].to_f64_lossy());
        state = (next, y);
    }
    out
}
