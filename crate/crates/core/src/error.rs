use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    DimMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A batched tensor does not have the layout the operation expects.
    ShapeMismatch(String),
    NonFinite(&'static str),
    RankDeficient { column: usize },
    Singular { pivot: usize },
    InvalidRank { rank: usize, max: usize },
    InvalidConfig(String),
    WrongVariant(&'static str),
    EmptySequence,
    InvalidDim(usize),
    /// The band selected for a sample owns no experts.
    AllMasked { band: usize },
    NotOnSimplex { row: usize, sum: f64 },
    EmptyMask,
    CacheMismatch,
    NonFiniteLoss { step: usize, layer: Option<usize> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::RankDeficient { column } => {
                write!(f, "matrix is rank deficient at column {column}")
            }
            Error::Singular { pivot } => write!(f, "matrix is singular at pivot {pivot}"),
            Error::InvalidRank { rank, max } => {
                write!(f, "target rank {rank} exceeds the smaller dimension {max}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::WrongVariant(op) => write!(f, "{op} is not defined for this adapter variant"),
            Error::EmptySequence => f.write_str("cannot pool an empty sequence"),
            Error::InvalidDim(d) => write!(f, "sigma feature dimension {d} must be even"),
            Error::AllMasked { band } => write!(f, "band {band} has no experts assigned"),
            Error::NotOnSimplex { row, sum } => {
                write!(f, "gate row {row} is not a probability vector (sum {sum})")
            }
            Error::EmptyMask => f.write_str("loss mask excludes every position"),
            Error::CacheMismatch => f.write_str("forward cache does not match the adapter state"),
            Error::NonFiniteLoss { step, layer } => match layer {
                Some(l) => write!(f, "non-finite loss at step {step} (layer {l})"),
                None => write!(f, "non-finite loss at step {step}"),
            },
        }
    }
}

impl core::error::Error for Error {}
