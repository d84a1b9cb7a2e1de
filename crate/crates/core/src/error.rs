use thiserror::Error;

pub type Result<T> = std::result::Result<T, AcrError>;

#[derive(Debug, Error)]
pub enum AcrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operands are built on different cluster/block trees")]
    TreeMismatch,

    #[error("singular pivot block (rows {lo}..{hi}{})", location(*.level, *.block))]
    SingularPivot { level: Option<usize>, block: Option<usize>, lo: usize, hi: usize },

    #[error("Krylov breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: &'static str },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(level: Option<usize>, block: Option<usize>) -> String {
    match (level, block) {
        (Some(l), Some(b)) => format!(", level {l}, block row {b}"),
        (Some(l), None) => format!(", level {l}"),
        (None, Some(b)) => format!(", block row {b}"),
        (None, None) => String::new(),
    }
}

impl AcrError {
    /// Attach CR level / block-row information to a singular-pivot error.
    pub(crate) fn at_block(self, lvl: usize, row: usize) -> Self {
        match self {
            AcrError::SingularPivot { lo, hi, .. } => {
                AcrError::SingularPivot { level: Some(lvl), block: Some(row), lo, hi }
            }
            other => other,
        }
    }
}
