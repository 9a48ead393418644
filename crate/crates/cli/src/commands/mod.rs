pub mod evolve;
pub mod hypotheses;
pub mod spectrum;
pub mod verify;
pub mod verify_all;

use crate::config::Resolved;
use crate::outcome::Failure;

/// The single-scenario commands, shared between the CLI dispatcher and the
/// verify-all manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Spectrum,
    Evolve,
    Verify,
    CheckHypotheses,
}

pub fn dispatch(kind: Kind, resolved: &Resolved) -> Result<String, Failure> {
    match kind {
        Kind::Spectrum => spectrum::run(resolved),
        Kind::Evolve => evolve::run(resolved),
        Kind::Verify => verify::run(resolved, None),
        Kind::CheckHypotheses => hypotheses::run(resolved),
    }
}
