//! BB84 quantum key distribution: simulator, sifting, LDPC reconciliation,
//! finite-key bounds, privacy amplification and the classical link.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod finite_key;
pub mod ldpc;
pub mod link;
pub mod privacy;
pub mod session;
pub mod source;

pub use bits::{BitError, BitString, SeededRng};
pub use finite_key::{FiniteKeyError, FiniteKeyParams, SecretFraction, SecurityBudget};
pub use ldpc::{DegreeDistribution, LdpcError, SparseParityMatrix};
pub use link::{Endpoint, Frame, LinkError, MsgType, Transport};
pub use privacy::{PrivacyError, ToeplitzSpec};
pub use session::{run_session, run_session_over, SessionConfig, SessionError, SessionOutput, SessionReport};
pub use source::{DetectionRecord, SourceError, SourceModel};
