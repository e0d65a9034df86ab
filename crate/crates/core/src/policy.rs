//! One-step greedy selection and the two elimination rules.
//!
//! The relaxed problem minimizes a concave function of the next-step
//! distribution over cells, so its optimum sits on a vertex of the simplex:
//! go to the active cell with the smallest `p(1 - p)`. Ties share the mass
//! uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{c_measure, CellStatistics};
use crate::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("active set is empty")]
    EmptyActiveSet,
    #[error("estimates cover {estimates} cells, active index {index} out of range")]
    IndexOutOfRange { index: usize, estimates: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig<T> {
    /// Stability tolerance on successive estimates.
    pub delta: T,
    /// Number of past visits the stability rule looks back over.
    pub n_delta: usize,
    /// Consecutive stays that force elimination.
    pub n_max: u64,
    /// Two costs tie when they differ by at most this much.
    pub tie_tolerance: T,
}

impl<T: Scalar> PolicyConfig<T> {
    pub fn new(delta: T, n_delta: usize, n_max: u64) -> Self {
        Self {
            delta,
            n_delta,
            n_max,
            tie_tolerance: T::of(1e-9),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(PolicyError::InvalidConfig("delta must lie in (0, 1)"));
        }
        if self.n_delta == 0 || self.n_max == 0 {
            return Err(PolicyError::InvalidConfig(
                "n_delta and n_max must be positive",
            ));
        }
        if !(self.tie_tolerance >= T::zero() && self.tie_tolerance < self.delta) {
            return Err(PolicyError::InvalidConfig(
                "tie_tolerance must lie in [0, delta)",
            ));
        }
        Ok(())
    }
}

/// Active cells whose cost is within the tie tolerance of the minimum.
pub fn minimizers<T: Scalar>(
    active: &[usize],
    estimates: &[T],
    tie_tolerance: T,
) -> Result<Vec<usize>, PolicyError> {
    if active.is_empty() {
        return Err(PolicyError::EmptyActiveSet);
    }
    let costs = active
        .iter()
        .map(|&k| {
            estimates
                .get(k)
                .map(|&p| c_measure(p).unwrap_or_else(|_| T::infinity()))
                .ok_or(PolicyError::IndexOutOfRange {
                    index: k,
                    estimates: estimates.len(),
                })
        })
        .collect::<Result<Vec<T>, _>>()?;
    let best = costs.iter().fold(T::infinity(), |a, &b| a.min(b));
    Ok(active
        .iter()
        .zip(&costs)
        .filter(|(_, &c)| c <= best + tie_tolerance)
        .map(|(&k, _)| k)
        .collect())
}

/// Optimal next-step distribution over all `estimates.len()` cells.
pub fn distribution_form<T: Scalar>(
    active: &[usize],
    estimates: &[T],
    config: &PolicyConfig<T>,
) -> Result<Vec<T>, PolicyError> {
    let tied = minimizers(active, estimates, config.tie_tolerance)?;
    let w = T::one() / T::of(tied.len() as f64);
    let mut out = vec![T::zero(); estimates.len()];
    for k in tied {
        out[k] = w;
    }
    Ok(out)
}

/// Samples the next cell from [`distribution_form`]. The rng is consumed
/// only when there is an actual tie.
pub fn select_next<T: Scalar, R: Rng + ?Sized>(
    active: &[usize],
    estimates: &[T],
    config: &PolicyConfig<T>,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    let tied = minimizers(active, estimates, config.tie_tolerance)?;
    Ok(match tied.len() {
        1 => tied[0],
        r => tied[rng.gen_range(0..r)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliminationReason {
    ConsecutiveStay,
    EstimateStable,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationDecision {
    pub eliminate: bool,
    pub reason: EliminationReason,
}

impl EliminationDecision {
    const KEEP: Self = Self {
        eliminate: false,
        reason: EliminationReason::None,
    };
}

/// Elimination test for the cell the agent currently occupies.
///
/// Consecutive stays are checked first; stability needs a full window of
/// `n_delta + 1` visit-time estimates, each within `delta` of the current one.
pub fn check_elimination<T: Scalar>(
    stats: &CellStatistics,
    config: &PolicyConfig<T>,
) -> EliminationDecision {
    if stats.consecutive_stay >= config.n_max {
        return EliminationDecision {
            eliminate: true,
            reason: EliminationReason::ConsecutiveStay,
        };
    }
    if stats.visits as usize > config.n_delta && stats.history_len() == config.n_delta + 1 {
        let current: T = stats.estimate();
        if stats
            .history::<T>()
            .all(|h| (h - current).abs() < config.delta)
        {
            return EliminationDecision {
                eliminate: true,
                reason: EliminationReason::EstimateStable,
            };
        }
    }
    EliminationDecision::KEEP
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::NINE_CELL_TRUE_P;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PolicyConfig<f64> {
        PolicyConfig::new(0.02, 250, 50)
    }

    #[test]
    fn true_probabilities_pick_first_cell() {
        // c = p(1 - p): 0.09, 0.1344, 0.2436, 0.1659, 0.24, 0.1875, 0.2484, 0.2016, 0.2464
        let costs: Vec<f64> = NINE_CELL_TRUE_P.iter().map(|p| p * (1.0 - p)).collect();
        let oracle_best = (0..9)
            .min_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap())
            .unwrap();
        assert_eq!(oracle_best, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let active: Vec<usize> = (0..9).collect();
        assert_eq!(
            select_next(&active, &NINE_CELL_TRUE_P, &cfg(), &mut rng).unwrap(),
            0
        );
    }

    #[test]
    fn symmetric_tie_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 2];
        for _ in 0..20_000 {
            counts[select_next(&[0, 1], &[0.9, 0.1], &cfg(), &mut rng).unwrap()] += 1;
        }
        // 4 sigma band around 10_000 with sigma ~ 70.7
        assert!((counts[0] as i64 - 10_000).abs() < 283, "{counts:?}");
        let d = distribution_form(&[0, 1], &[0.9, 0.1], &cfg()).unwrap();
        assert_eq!(d, vec![0.5, 0.5]);
    }

    #[test]
    fn single_active_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            select_next(&[3], &[0.5, 0.9, 0.1, 0.4], &cfg(), &mut rng).unwrap(),
            3
        );
    }

    #[test]
    fn empty_active_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            select_next(&[], &[0.5], &cfg(), &mut rng),
            Err(PolicyError::EmptyActiveSet)
        );
        assert_eq!(
            distribution_form(&[], &[0.5], &cfg()),
            Err(PolicyError::EmptyActiveSet)
        );
    }

    #[test]
    fn distribution_forms() {
        let d = distribution_form(&[0, 1, 2], &[0.6, 0.95, 0.7], &cfg()).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 0.0]);
        let d = distribution_form(&[0, 1, 2, 3], &[0.5; 4], &cfg()).unwrap();
        assert_eq!(d, vec![0.25; 4]);
        // inactive cells get no mass even with a better cost
        let d = distribution_form(&[1, 2], &[1.0, 0.6, 0.6], &cfg()).unwrap();
        assert_eq!(d, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn float_split_ties_restored() {
        // 0.7 * 0.3 and 0.3 * 0.7 can differ in the last bit.
        let t = minimizers(&[0, 1], &[0.7, 1.0 - 0.7], 1e-9).unwrap();
        assert_eq!(t, vec![0, 1]);
    }

    fn stats_with(obs: &[bool], stay: u64, n_delta: usize) -> CellStatistics {
        let mut s = CellStatistics::new(n_delta);
        for &y in obs {
            s.record_observation(y);
        }
        s.consecutive_stay = stay;
        s
    }

    #[test]
    fn consecutive_stay_eliminates() {
        let s = stats_with(&[true; 50], 50, 250);
        assert_eq!(
            check_elimination(&s, &cfg()),
            EliminationDecision {
                eliminate: true,
                reason: EliminationReason::ConsecutiveStay
            }
        );
        let s = stats_with(&[true; 49], 49, 250);
        assert!(!check_elimination(&s, &cfg()).eliminate);
    }

    #[test]
    fn stable_history_eliminates() {
        // 251 visits all at estimate 0.7375 is impossible with one cell's
        // counts, so use a constant estimate of 1.
        let s = stats_with(&[true; 251], 1, 250);
        assert_eq!(
            check_elimination(&s, &cfg()),
            EliminationDecision {
                eliminate: true,
                reason: EliminationReason::EstimateStable
            }
        );
        let s = stats_with(&[true; 250], 1, 250);
        assert!(!check_elimination(&s, &cfg()).eliminate);
    }

    #[test]
    fn stability_window_of_constant_ratio() {
        // 59/80 repeated: build a long history that settles at 0.7375 and
        // stays within delta across the window.
        let mut obs = Vec::new();
        for i in 0..4000 {
            obs.push(i % 80 < 59);
        }
        let c = PolicyConfig::new(0.02, 250, 10_000);
        let s = stats_with(&obs, 3, 250);
        assert!((s.estimate::<f64>() - 0.7375).abs() < 1e-12);
        assert_eq!(
            check_elimination(&s, &c).reason,
            EliminationReason::EstimateStable
        );
    }

    #[test]
    fn short_history_and_short_stay_keep() {
        let s = stats_with(&[true, false, true], 3, 250);
        assert_eq!(check_elimination(&s, &cfg()), EliminationDecision::KEEP);
    }

    #[test]
    fn stay_checked_before_stability() {
        let s = stats_with(&[true; 300], 60, 250);
        assert_eq!(
            check_elimination(&s, &cfg()).reason,
            EliminationReason::ConsecutiveStay
        );
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(PolicyConfig::new(0.0, 250, 50).validate().is_err());
        assert!(PolicyConfig::new(0.02, 0, 50).validate().is_err());
        let mut c = cfg();
        c.tie_tolerance = 0.5;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn sample_in_support(
            est in prop::collection::vec(0.0f64..=1.0, 1..12),
            mask in prop::collection::vec(any::<bool>(), 12),
            seed in any::<u64>(),
        ) {
            let mut active: Vec<usize> = (0..est.len()).filter(|&i| mask[i]).collect();
            if active.is_empty() { active.push(0); }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = distribution_form(&active, &est, &cfg()).unwrap();
            let k = select_next(&active, &est, &cfg(), &mut rng).unwrap();
            prop_assert!(d[k] > 0.0);
            let total: f64 = d.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);

            // vertex optimality of q(1 - q), q = sum_l p_l pi_l, over active vertices
            let q = |v: usize| est[v] * (1.0 - est[v]);
            for &v in &active {
                prop_assert!(q(k) <= q(v) + 1e-9);
            }
        }

        #[test]
        fn ranking_invariant_under_shift(
            est in prop::collection::vec(0.0f64..=1.0, 2..10),
            shift in -0.2f64..0.2,
        ) {
            let active: Vec<usize> = (0..est.len()).collect();
            let costs: Vec<f64> = est.iter().map(|p| p * (1.0 - p)).collect();
            let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
            let base: Vec<usize> = active.iter().cloned().filter(|&k| costs[k] <= min + 1e-9).collect();
            let shifted_min = costs.iter().map(|c| c + shift).fold(f64::INFINITY, f64::min);
            let shifted: Vec<usize> = active
                .iter()
                .cloned()
                .filter(|&k| costs[k] + shift <= shifted_min + 1e-9)
                .collect();
            prop_assert_eq!(&base, &minimizers(&active, &est, 1e-9).unwrap());
            prop_assert_eq!(base, shifted);
        }
    }
}
