//! Relative safe/unsafe labeling from frozen per-cell variances.
//!
//! The threshold is the lower end of the largest gap in the sorted `c`
//! values when that gap sits in the middle quartile range of positions, and
//! the (lower) median otherwise. A cell is safe when its `c` is at most the
//! threshold and its final estimate is at least one half.
//!
//! Everything here only needs an ordered field, so exact rationals work as
//! well as floats.

use std::cmp::Ordering;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("need at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("{c} c-values but {p} estimates")]
    LengthMismatch { c: usize, p: usize },
    #[error("value for cell {0} is not comparable")]
    Incomparable(usize),
    #[error("estimate for cell {0} outside [0, 1]")]
    EstimateOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRoute {
    Gap,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold<T> {
    pub c_threshold: T,
    /// One-based position in sorted order of the lower end of the largest gap.
    pub k_star: usize,
    pub route: ThresholdRoute,
    /// `sort_order[i]` is the zero-based cell at sorted position `i + 1`.
    pub sort_order: Vec<usize>,
    /// `gaps[i] = c_(i+2) - c_(i+1)` in one-based sorted positions.
    pub gaps: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult<T> {
    pub sort_order: Vec<usize>,
    pub gaps: Vec<T>,
    pub k_star: usize,
    pub route: ThresholdRoute,
    pub c_threshold: T,
    pub labels: Vec<Label>,
    /// Zero-based safe cells in ascending order.
    pub safe_set: Vec<usize>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Position window `[ceil(m/4), ceil(3m/4)]` in which the gap route applies.
pub fn quartile_window(m: usize) -> (usize, usize) {
    (ceil_div(m, 4), ceil_div(3 * m, 4))
}

pub fn threshold<T: Num + PartialOrd + Copy>(c: &[T]) -> Result<Threshold<T>, ClassifyError> {
    let m = c.len();
    if m < 2 {
        return Err(ClassifyError::TooFewCells(m));
    }
    if let Some(k) = (0..m).find(|&k| c[k].partial_cmp(&c[k]).is_none()) {
        return Err(ClassifyError::Incomparable(k));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        c[a].partial_cmp(&c[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sorted: Vec<T> = order.iter().map(|&k| c[k]).collect();
    let gaps: Vec<T> = sorted.windows(2).map(|w| w[1] - w[0]).collect();

    // Strict improvement keeps the lowest position among equal gaps.
    let mut k_star = 1;
    let mut best = gaps[0];
    for (i, &g) in gaps.iter().enumerate().skip(1) {
        if g > best {
            best = g;
            k_star = i + 1;
        }
    }
    let (lo, hi) = quartile_window(m);
    let (route, c_threshold) = if (lo..=hi).contains(&k_star) {
        (ThresholdRoute::Gap, sorted[k_star - 1])
    } else {
        (ThresholdRoute::Median, sorted[m.div_ceil(2) - 1])
    };
    Ok(Threshold {
        c_threshold,
        k_star,
        route,
        sort_order: order,
        gaps,
    })
}

pub fn classify<T: Num + PartialOrd + Copy>(
    c: &[T],
    estimates: &[T],
) -> Result<ClassificationResult<T>, ClassifyError> {
    if c.len() != estimates.len() {
        return Err(ClassifyError::LengthMismatch {
            c: c.len(),
            p: estimates.len(),
        });
    }
    if let Some(k) = estimates
        .iter()
        .position(|&p| !(p >= T::zero() && p <= T::one()))
    {
        return Err(ClassifyError::EstimateOutOfRange(k));
    }
    let t = threshold(c)?;
    let half = T::one() / (T::one() + T::one());
    let labels: Vec<Label> = c
        .iter()
        .zip(estimates)
        .map(|(&ck, &pk)| {
            if ck <= t.c_threshold && pk >= half {
                Label::Safe
            } else {
                Label::Unsafe
            }
        })
        .collect();
    let safe_set = (0..labels.len())
        .filter(|&k| labels[k] == Label::Safe)
        .collect();
    Ok(ClassificationResult {
        sort_order: t.sort_order,
        gaps: t.gaps,
        k_star: t.k_star,
        route: t.route,
        c_threshold: t.c_threshold,
        labels,
        safe_set,
    })
}

/// Classifies from final estimates alone, with `c = p(1 - p)`.
pub fn classify_estimates<T: Num + PartialOrd + Copy>(
    estimates: &[T],
) -> Result<ClassificationResult<T>, ClassifyError> {
    let c: Vec<T> = estimates.iter().map(|&p| p * (T::one() - p)).collect();
    classify(&c, estimates)
}
