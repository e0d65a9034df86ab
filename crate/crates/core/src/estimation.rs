//! Per-cell sufficient statistics and the variance measure `c = p(1 - p)`.
//!
//! Estimates are kept as exact `(successes, visits)` pairs and only turned
//! into reals on demand, so the n-th estimate is always exactly
//! `successes / visits` with no incremental drift.

use std::collections::VecDeque;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Exact, Scalar};

/// Estimate reported for a cell that has never been observed.
///
/// It sits at the maximum of `p(1 - p)`, so an unvisited cell is never
/// preferred over a visited one with a decisive estimate.
pub const UNVISITED_PRIOR: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("value outside [0, 1]")]
pub struct DomainError;

/// Bernoulli variance `p(1 - p)` of an estimate. Works for floats and for
/// exact rationals.
pub fn c_measure<T: Num + PartialOrd + Copy>(p: T) -> Result<T, DomainError> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(DomainError);
    }
    Ok(p * (T::one() - p))
}

/// Signed estimation error `estimate - truth`.
pub fn estimation_error<T: Scalar>(estimate: T, truth: T) -> T {
    estimate - truth
}

/// Exact ratio `successes / visits`; `None` before the first visit.
fn ratio(successes: u64, visits: u64) -> Option<Exact> {
    (visits > 0).then(|| Exact::new(successes, visits))
}

fn ratio_to<T: Scalar>(successes: u64, visits: u64) -> T {
    if visits == 0 {
        T::of(UNVISITED_PRIOR)
    } else {
        T::of(successes as f64 / visits as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatistics {
    pub visits: u64,
    pub successes: u64,
    /// `(successes, visits)` after each of the most recent visits, oldest first.
    history: VecDeque<(u64, u64)>,
    window: usize,
    /// Run length of consecutive iterations spent at this cell, current one
    /// included. Reset when the agent leaves.
    pub consecutive_stay: u64,
    pub eliminated_at: Option<u64>,
    pub frozen_c: Option<f64>,
}

impl CellStatistics {
    /// Statistics whose history window keeps `n_delta + 1` estimates.
    pub fn new(n_delta: usize) -> Self {
        Self {
            visits: 0,
            successes: 0,
            history: VecDeque::with_capacity(n_delta + 1),
            window: n_delta + 1,
            consecutive_stay: 0,
            eliminated_at: None,
            frozen_c: None,
        }
    }

    pub fn record_observation(&mut self, y: bool) {
        self.visits += 1;
        self.successes += u64::from(y);
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back((self.successes, self.visits));
    }

    pub fn estimate<T: Scalar>(&self) -> T {
        ratio_to(self.successes, self.visits)
    }

    pub fn estimate_exact(&self) -> Option<Exact> {
        ratio(self.successes, self.visits)
    }

    /// Estimates recorded at the last (at most `n_delta + 1`) visits.
    pub fn history<T: Scalar>(&self) -> impl Iterator<Item = T> + '_ {
        self.history.iter().map(|&(s, v)| ratio_to(s, v))
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_eliminated(&self) -> bool {
        self.eliminated_at.is_some()
    }

    /// Freezes `c_k` from the current estimate and stamps the iteration.
    pub fn eliminate(&mut self, iteration: u64) -> f64 {
        let c = c_measure(self.estimate::<f64>()).expect("estimate lies in [0, 1]");
        self.eliminated_at = Some(iteration);
        self.frozen_c = Some(c);
        c
    }
}

/// Per-cell estimates at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot<T> {
    pub iteration: u64,
    pub values: Vec<T>,
}

impl<T: Scalar> EstimateSnapshot<T> {
    pub fn capture(iteration: u64, cells: &[CellStatistics]) -> Self {
        Self {
            iteration,
            values: cells.iter().map(CellStatistics::estimate).collect(),
        }
    }
}
