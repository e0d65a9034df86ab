//! Simulated trust oracle and seed derivation.
//!
//! Randomness is ChaCha8 (`rand_chacha` 0.3). A run is identified by a master
//! seed and a run index; [`substream`] maps the pair onto a ChaCha stream so
//! replications never share draws and each one replays on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Scalar;

/// Which consumer a substream feeds. Each run owns one stream per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Oracle = 0,
    Policy = 1,
    Diagnostic = 2,
    Auxiliary = 3,
}

pub fn substream(master_seed: u64, run_index: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("cell {cell} out of range for {cells} cells")]
    CellOutOfRange { cell: usize, cells: usize },
    #[error("probability for cell {cell} outside [0, 1]")]
    InvalidProbability { cell: usize },
}

/// Bernoulli responder holding the hidden per-cell probabilities.
#[derive(Debug, Clone)]
pub struct TrustOracle<T> {
    true_p: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TrustOracle<T> {
    pub fn new(true_p: Vec<T>, master_seed: u64, run_index: u64) -> Result<Self, OracleError> {
        Self::with_rng(
            true_p,
            substream(master_seed, run_index, StreamPurpose::Oracle),
        )
    }

    pub fn with_rng(true_p: Vec<T>, rng: ChaCha8Rng) -> Result<Self, OracleError> {
        if let Some(cell) = true_p
            .iter()
            .position(|&p| !(p >= T::zero() && p <= T::one()))
        {
            return Err(OracleError::InvalidProbability { cell });
        }
        Ok(Self { true_p, rng })
    }

    pub fn cell_count(&self) -> usize {
        self.true_p.len()
    }

    pub fn true_p(&self) -> &[T] {
        &self.true_p
    }

    /// Draws the oracle's answer at zero-based `cell`.
    pub fn observe(&mut self, cell: usize) -> Result<bool, OracleError> {
        let p = *self.true_p.get(cell).ok_or(OracleError::CellOutOfRange {
            cell,
            cells: self.true_p.len(),
        })?;
        Ok(self.rng.gen_bool(p.to_f64_lossy()))
    }
}
