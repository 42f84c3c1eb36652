use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),

    #[error("target unreachable for leg {leg}: distance {distance:.6} m outside [{min:.6}, {max:.6}]")]
    Unreachable {
        leg: usize,
        distance: f64,
        min: f64,
        max: f64,
    },

    #[error("degenerate support polygon: {0}")]
    Degenerate(String),

    #[error("margin fraction {0} outside [0, 1)")]
    BadMargin(f64),

    #[error("no static equilibrium: residual {residual:.3e}")]
    NoEquilibrium { residual: f64 },

    #[error("sampling exhausted after {attempts} rejected draws")]
    SamplingExhausted { attempts: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss node is not scalar (shape {rows}x{cols})")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("optimisation diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("stance {target} not reached: segment ended in stance {reached}")]
    StanceRegressed { target: u8, reached: u8 },

    #[error("stance {to} is not the cyclic successor of {from}")]
    NotSuccessor { from: u8, to: u8 },

    #[error("invalid input: {0}")]
    BadInput(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: String, found: String },

    #[error("checksum mismatch: expected {expected:08x}, computed {computed:08x}")]
    ChecksumMismatch { expected: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return Error::Io(io);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        Error::Format(e.to_string())
    }
}
