use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("not a physical state: eigenvalue {min_eigenvalue:e} below -1e-12")]
    NonPhysicalState { min_eigenvalue: f64 },

    /// Rank-deficient input where a logarithm is required. The entropy
    /// production rate diverges on such states.
    #[error("boundary state: eigenvalue {eigenvalue:e} unresolved, thermalization inflow {inflow:e}")]
    BoundaryState { eigenvalue: f64, inflow: f64 },

    #[error("target entropy {target} unreachable, admissible range is (0, {max})")]
    Unreachable { target: f64, max: f64 },

    #[error("positivity lost: output eigenvalue {min_eigenvalue:e} below -1e-10")]
    PositivityLoss { min_eigenvalue: f64 },

    #[error("truncation breach: trace drift {trace_drift:e}, top-level population {tail_population:e}, tolerance {tail_tol:e}")]
    TruncationBreach {
        trace_drift: f64,
        tail_population: f64,
        tail_tol: f64,
    },

    #[error("operator is not an orthogonal projector (defect {defect:e})")]
    NotAProjector { defect: f64 },

    #[error("constraint gradients are numerically parallel (Gram determinant ratio {ratio:e})")]
    GramSingular { ratio: f64 },
}

impl LabError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
