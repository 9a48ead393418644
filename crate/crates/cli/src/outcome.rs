//! Process-level verdicts. Every command funnels into one of five exit
//! codes: 0 pass, 1 usage or configuration, 2 hypothesis not satisfied,
//! 3 residual or expectation above its gate, 4 numerical abort.

use curvspec::CurvspecError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Usage(String),
    Hypothesis(String),
    Residual(String),
    Numerical(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn hypothesis(msg: impl Into<String>) -> Self {
        Failure::Hypothesis(msg.into())
    }

    pub fn residual(msg: impl Into<String>) -> Self {
        Failure::Residual(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Failure::Numerical(msg.into())
    }

    /// Setup-phase errors: anything the user wrote wrong.
    pub fn usage_from(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }

    /// Compute-phase errors: solver and stability failures abort (4),
    /// everything else is a misconfigured request (1).
    pub fn compute_from(e: CurvspecError) -> Self {
        match e {
            CurvspecError::Eigensolver(_)
            | CurvspecError::StepTooLarge { .. }
            | CurvspecError::Unresolved(_)
            | CurvspecError::Mesh(_) => Failure::Numerical(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Hypothesis(_) => 2,
            Failure::Residual(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m)
            | Failure::Hypothesis(m)
            | Failure::Residual(m)
            | Failure::Numerical(m) => m,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            Failure::Usage(_) => "usage",
            Failure::Hypothesis(_) => "hypothesis",
            Failure::Residual(_) => "residual",
            Failure::Numerical(_) => "numerical",
        };
        write!(f, "{kind}: {}", self.message())
    }
}
