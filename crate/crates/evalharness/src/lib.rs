//! Acceptance suite for kgranger: benchmark F1 targets, numerical identity
//! checks and structural-model recovery.

pub mod acceptance;
pub mod checks;
pub mod error;
pub mod scm;
pub mod targets;

pub use acceptance::{run_acceptance, AcceptanceReport, TargetOutcome};
pub use checks::CheckOutcome;
pub use error::{EvalError, EvalResult};
pub use targets::AcceptanceTarget;
