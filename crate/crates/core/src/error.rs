use thiserror::Error;

/// Errors raised by the algebra, assembly and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid gram matrix for space `{label}`: {reason}")]
    InvalidGram { label: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular pivot at block {block}: {detail}")]
    Pivot { block: String, detail: String },

    #[error("singular factor `{factor}`: {detail}")]
    Singular { factor: String, detail: String },

    #[error("operator is not selfadjoint (residual {residual:.3e})")]
    NotSelfadjoint { residual: f64 },

    #[error("unknown operator `{0}`")]
    UnknownOperator(String),

    #[error("operator pair ({0}, {1}) has no boundary-data map")]
    InvalidPair(String, String),

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error(
        "frequency too small: need nu > |alpha_b| = {alpha_norm:.6e} but nu = {nu:.6e} \
         (the bound 1 - |alpha_b|/nu = {bound:.6e} is not positive)"
    )]
    FrequencyTooSmall {
        nu: f64,
        alpha_norm: f64,
        bound: f64,
    },

    #[error("hypothesis `{name}` fails: {detail}")]
    Hypothesis { name: String, detail: String },

    #[error("step matrix singular at step {step}: {detail}")]
    StepSingular { step: usize, detail: String },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("operation requires a certificate: {0}")]
    Uncertified(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context: context.to_string(),
            expected,
            found,
        })
    }
}
