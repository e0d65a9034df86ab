//! Large-deviation rates for Bernoulli observation streams.
//!
//! For i.i.d. Bernoulli(p) observations the empirical mean decays away from
//! `p` at rate
//!
//! ```text
//! I(eps, p) = eps ln(eps / p) + (1 - eps) ln((1 - eps) / (1 - p))
//! ```
//!
//! the KL divergence between Bernoulli(eps) and Bernoulli(p). Rates are
//! returned nonnegative; plot data negates them. When the cell visited at
//! each step follows a stationary policy, the observations behave in the
//! limit like i.i.d. draws with the effective probability `sum_l p_l pi_l`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{self, MarkovError, PolicyTable};
use crate::oracle::{substream, StreamPurpose};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LdpError {
    #[error("argument must lie strictly inside (0, 1)")]
    Boundary,
    #[error("weights are not a probability vector")]
    Simplex,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("effective probability is degenerate (0 or 1)")]
    Degenerate,
    #[error("need at least 2 grid points")]
    TooFewPoints,
    #[error("diagnostic needs horizon >= 100 and trials >= 1000")]
    TooSmall,
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

fn interior<T: Scalar>(x: T) -> bool {
    x > T::zero() && x < T::one()
}

/// `I(eps, p)`; zero iff `eps == p`.
pub fn rate_function<T: Scalar>(eps: T, p: T) -> Result<T, LdpError> {
    if !interior(eps) || !interior(p) {
        return Err(LdpError::Boundary);
    }
    let q = T::one() - eps;
    Ok(eps * (eps / p).ln() + q * (q / (T::one() - p)).ln())
}

/// Stationary-weighted mean `sum_l p_l pi_l`.
pub fn effective_p<T: Scalar>(p: &[T], pi: &[T]) -> Result<T, LdpError> {
    if p.len() != pi.len() {
        return Err(LdpError::Length(p.len(), pi.len()));
    }
    let sum = pi.iter().fold(T::zero(), |a, &b| a + b);
    let simplex_tol = T::of(1e-12).max(T::epsilon() * T::of(8.0 * pi.len() as f64));
    if pi.iter().any(|&w| w.is_nan() || w < T::zero()) || (sum - T::one()).abs() > simplex_tol {
        return Err(LdpError::Simplex);
    }
    Ok(p.iter().zip(pi).fold(T::zero(), |a, (&x, &w)| a + x * w))
}

/// Rate of the Markov-modulated stream: `I(eps, effective_p(p, pi))`.
pub fn rate_bar<T: Scalar>(eps: T, p: &[T], pi: &[T]) -> Result<T, LdpError> {
    let pe = effective_p(p, pi)?;
    if !interior(pe) {
        return Err(LdpError::Degenerate);
    }
    rate_function(eps, pe)
}

/// Maximizer of `theta eps - ln(e^theta p + 1 - p)`.
pub fn chernoff_theta_star<T: Scalar>(eps: T, p: T) -> Result<T, LdpError> {
    if !interior(eps) || !interior(p) {
        return Err(LdpError::Boundary);
    }
    Ok((eps * (T::one() - p) / (p * (T::one() - eps))).ln())
}

/// Chernoff objective `theta eps - ln(e^theta p + 1 - p)`.
pub fn chernoff_objective<T: Scalar>(theta: T, eps: T, p: T) -> T {
    theta * eps - (theta.exp() * p + T::one() - p).ln()
}

/// `-I(eps, p)` sampled on a grid of `p` values inset half a step from 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve<T> {
    pub epsilon: T,
    pub grid: Vec<(T, T)>,
}

pub fn rate_curve<T: Scalar>(eps: T, n_points: usize) -> Result<RateCurve<T>, LdpError> {
    if n_points < 2 {
        return Err(LdpError::TooFewPoints);
    }
    if !interior(eps) {
        return Err(LdpError::Boundary);
    }
    let n = T::of(n_points as f64);
    let grid = (0..n_points)
        .map(|i| {
            let p = (T::of(i as f64) + T::of(0.5)) / n;
            rate_function(eps, p).map(|r| (p, -r))
        })
        .collect::<Result<_, _>>()?;
    Ok(RateCurve { epsilon: eps, grid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub horizon: usize,
    pub trials: usize,
    pub effective_p: f64,
    /// Mean of `S_n / n` over trials.
    pub mean_fraction: f64,
    pub mean_std_error: f64,
    pub deviation: f64,
    /// Trials with `|S_n / n - p_eff| >= deviation`.
    pub exceedances: usize,
    /// `(1/n) ln` of the exceedance frequency; `-inf` when none were seen.
    pub empirical_log_rate: f64,
    /// `-I(p_eff + deviation, p_eff)` when the upper target is inside (0, 1).
    pub predicted_upper: Option<f64>,
    /// `-I(p_eff - deviation, p_eff)` when the lower target is inside (0, 1).
    pub predicted_lower: Option<f64>,
}

/// Simulates `trials` trajectories of `horizon` steps of the chain induced by
/// `policy` (started from the cell chain's stationary law) and compares the
/// observation average with the effective probability.
///
/// Reports numbers only; finite-horizon agreement corroborates but cannot
/// establish an asymptotic statement.
pub fn asymptotic_independence_diagnostic<T: Scalar>(
    policy: &PolicyTable<T>,
    p: &[T],
    horizon: usize,
    trials: usize,
    deviation: f64,
    seed: u64,
) -> Result<IndependenceReport, LdpError> {
    if horizon < 100 || trials < 1000 {
        return Err(LdpError::TooSmall);
    }
    let reduced = markov::build_reduced(policy, p)?;
    let pibar = markov::stationary(
        &reduced.matrix,
        T::of(1e-10).max(T::epsilon() * T::of(64.0)),
    )?;
    let pe = effective_p(p, &pibar)?.to_f64_lossy();

    let fractions: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64, StreamPurpose::Diagnostic);
            let mut cell = markov::sample_index(&pibar, &mut rng);
            let mut s = 0u64;
            for _ in 0..horizon {
                let y = rng.gen_bool(p[cell].to_f64_lossy());
                s += u64::from(y);
                cell = markov::sample_index(policy.row(cell, y), &mut rng);
            }
            s as f64 / horizon as f64
        })
        .collect();

    let tn = trials as f64;
    let mean = fractions.iter().sum::<f64>() / tn;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (tn - 1.0);
    let exceed = fractions
        .iter()
        .filter(|&&f| (f - pe).abs() >= deviation)
        .count();
    let log_rate = if exceed == 0 {
        f64::NEG_INFINITY
    } else {
        (exceed as f64 / tn).ln() / horizon as f64
    };
    let side = |target: f64| rate_function(target, pe).ok().map(|r| -r);
    Ok(IndependenceReport {
        horizon,
        trials,
        effective_p: pe,
        mean_fraction: mean,
        mean_std_error: (var / tn).sqrt(),
        deviation,
        exceedances: exceed,
        empirical_log_rate: log_rate,
        predicted_upper: side(pe + deviation),
        predicted_lower: side(pe - deviation),
    })
}
