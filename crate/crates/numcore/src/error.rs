use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("tensor data has {len} entries but shape {shape:?} needs {expected}")]
    DataLength {
        shape: [usize; 2],
        len: usize,
        expected: usize,
    },
    #[error("element-wise power must be at least 1, got {0}")]
    ZeroPower(u32),
    #[error("every entry is masked; no feasible action")]
    NoFeasibleAction,
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = NumError> = std::result::Result<T, E>;
