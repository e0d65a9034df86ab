//! Voronoi-partitioned environments.
//!
//! Cells are never materialized as polygons: membership of a point is decided
//! by its nearest center, which is all the learner needs. Points equidistant
//! from two or more centers lie on a cell boundary and belong to no open cell;
//! [`EnvironmentSpec::nearest_center`] resolves them to the lowest index and
//! raises [`NearestCell::boundary`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point<T> {
    pub coords: Vec<T>,
}

impl<T: Scalar> Point<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn squared_distance(&self, other: &Point<T>) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
    }
}

impl<T: Scalar> From<Vec<T>> for Point<T> {
    fn from(coords: Vec<T>) -> Self {
        Self { coords }
    }
}

/// Environment partition plus the oracle's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec<T> {
    pub dimension: usize,
    pub centers: Vec<Point<T>>,
    /// Per-cell probability that the oracle answers 1. Hidden from the learner.
    pub true_p: Vec<T>,
}

/// Result of a nearest-center query. `cell` is zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NearestCell {
    pub cell: usize,
    pub boundary: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("point has dimension {got}, environment has dimension {expected}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnsupportedDimension(usize),
    TooFewCells(usize),
    LengthMismatch { centers: usize, true_p: usize },
    WrongPointDimension { cell: usize, got: usize },
    NonFiniteCoordinate { cell: usize },
    DuplicateCenters { first: usize, second: usize },
    ProbabilityOutOfRange { cell: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedDimension(d) => write!(f, "dimension {d} not in {{2, 3}}"),
            Violation::TooFewCells(m) => write!(f, "need at least 2 cells, got {m}"),
            Violation::LengthMismatch { centers, true_p } => write!(
                f,
                "centers and true_p lengths differ ({centers} vs {true_p})"
            ),
            Violation::WrongPointDimension { cell, got } => {
                write!(f, "center {} has dimension {got}", cell + 1)
            }
            Violation::NonFiniteCoordinate { cell } => {
                write!(f, "center {} has a non-finite coordinate", cell + 1)
            }
            Violation::DuplicateCenters { first, second } => write!(
                f,
                "centers not pairwise distinct ({} and {})",
                first + 1,
                second + 1
            ),
            Violation::ProbabilityOutOfRange { cell, value } => {
                write!(f, "probability out of range: p_{} = {value}", cell + 1)
            }
        }
    }
}

impl<T: Scalar> EnvironmentSpec<T> {
    pub fn new(dimension: usize, centers: Vec<Point<T>>, true_p: Vec<T>) -> Self {
        Self {
            dimension,
            centers,
            true_p,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.centers.len()
    }

    /// Lists every broken invariant; an empty list means the spec is valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(2..=3).contains(&self.dimension) {
            out.push(Violation::UnsupportedDimension(self.dimension));
        }
        let m = self.centers.len();
        if m < 2 {
            out.push(Violation::TooFewCells(m));
        }
        if m != self.true_p.len() {
            out.push(Violation::LengthMismatch {
                centers: m,
                true_p: self.true_p.len(),
            });
        }
        for (cell, c) in self.centers.iter().enumerate() {
            if c.dim() != self.dimension {
                out.push(Violation::WrongPointDimension { cell, got: c.dim() });
            }
            if c.coords.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFiniteCoordinate { cell });
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if self.centers[i] == self.centers[j] {
                    out.push(Violation::DuplicateCenters {
                        first: i,
                        second: j,
                    });
                }
            }
        }
        for (cell, &p) in self.true_p.iter().enumerate() {
            if !(p >= T::zero() && p <= T::one()) {
                out.push(Violation::ProbabilityOutOfRange {
                    cell,
                    value: p.to_f64_lossy(),
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn nearest_center(&self, point: &Point<T>) -> Result<NearestCell, DimensionMismatch> {
        if point.dim() != self.dimension {
            return Err(DimensionMismatch {
                expected: self.dimension,
                got: point.dim(),
            });
        }
        let mut best = 0;
        let mut best_d = T::infinity();
        let mut boundary = false;
        for (j, c) in self.centers.iter().enumerate() {
            let d = point.squared_distance(c);
            if d < best_d {
                best = j;
                best_d = d;
                boundary = false;
            } else if d == best_d {
                boundary = true;
            }
        }
        Ok(NearestCell {
            cell: best,
            boundary,
        })
    }
}

/// The 3x3 grid layout used by the bundled nine-cell example, with the
/// ground-truth probabilities of that experiment.
pub fn nine_cell_example<T: Scalar>() -> EnvironmentSpec<T> {
    let centers = (0..9)
        .map(|k| {
            Point::new(vec![
                T::of((k % 3) as f64 * 2.0 + 1.0),
                T::of((k / 3) as f64 * 2.0 + 1.0),
            ])
        })
        .collect();
    EnvironmentSpec::new(
        2,
        centers,
        NINE_CELL_TRUE_P.iter().map(|&p| T::of(p)).collect(),
    )
}

/// True per-cell probabilities of the nine-cell example.
pub const NINE_CELL_TRUE_P: [f64; 9] = [0.9, 0.84, 0.58, 0.79, 0.6, 0.75, 0.54, 0.72, 0.56];
