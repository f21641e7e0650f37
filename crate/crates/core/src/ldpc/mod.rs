//! LDPC syndrome reconciliation.
//!
//! Bob sends `H * K_B` for every sub-block; Alice runs a belief-propagation
//! syndrome decoder seeded with her own sub-block and the estimated QBER until
//! her hard decision carries the same syndrome. Only the syndrome bits are
//! disclosed, `(1 - R_c)` of every block.

mod decode;
mod matrix;
mod peg;
mod reconcile;

pub use decode::{decode_bp_flooding, decode_bp_serial, DecodeResult, DecoderConfig, LLR_CLIP};
pub use matrix::{syndrome, DegreeDistribution, SparseParityMatrix};
pub use peg::peg_construct;
pub use reconcile::{bob_syndromes, partition, reconcile, BlockStats, Reconciled};

use thiserror::Error;

use crate::bits::BitError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpcError {
    #[error("invalid degree distribution: {0}")]
    BadDistribution(String),
    #[error("infeasible code: {0}")]
    Infeasible(String),
    #[error("bad code parameters: {0}")]
    BadParameters(String),
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("reconciliation failed: {failed} of {total} sub-blocks did not converge")]
    ReconciliationFailed { failed: usize, total: usize },
    #[error("matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Bits(#[from] BitError),
}

/// Fraction of each block disclosed as syndrome bits.
pub fn leakage_fraction(code_rate: f64) -> f64 {
    1.0 - code_rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leakage_examples() {
        assert_eq!(leakage_fraction(0.5), 0.5);
        assert!((leakage_fraction(0.9) - 0.1).abs() < 1e-15);
        assert_eq!(leakage_fraction(0.25), 0.75);
    }
}
