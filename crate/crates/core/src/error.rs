use thiserror::Error;

#[derive(Debug, Error)]
pub enum HdgError {
    #[error("mesh parse error: {0}")]
    Parse(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("edge labeling violates the mixed-type requirement on element {element}: {reason}")]
    Labeling { element: usize, reason: String },

    #[error("unsupported quadrature degree {0}")]
    UnsupportedQuadrature(usize),

    #[error("singular local system on element {element}")]
    SingularLocal { element: usize },

    #[error("numerically singular matrix ({context})")]
    Singular { context: String },

    #[error("matrix expected to be symmetric positive definite is not ({context})")]
    NotPositiveDefinite { context: String },

    #[error("ambiguous numerical rank: singular value ratio {ratio:e} lies in the ambiguity band")]
    RankAmbiguity { ratio: f64 },

    #[error("element spaces do not admit an M-decomposition (M-index {index})")]
    MDecompositionNotAdmitted { index: i64 },

    #[error("degenerate norm matrix in inf-sup estimate")]
    DegenerateNorm,
}

impl HdgError {
    /// Errors caused by invalid input rather than by a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HdgError::Parse(_)
                | HdgError::Topology(_)
                | HdgError::Config(_)
                | HdgError::Labeling { .. }
                | HdgError::UnsupportedQuadrature(_)
        )
    }
}

pub type Result<T, E = HdgError> = std::result::Result<T, E>;
