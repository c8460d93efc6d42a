//! Error type shared by all numeric kernels and the harness.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector norm at or below the degeneracy threshold ([`crate::batch::MIN_NORM`]).
    ZeroNorm,
    /// Triplet labels violate `y_a == y_p != y_n`.
    InvalidTriplet {
        index: usize,
    },
    /// No anchor/positive/negative structure can be formed from the batch labels.
    NoValidPairs,
    /// Class label outside `[0, K)`.
    BadLabel {
        label: usize,
        classes: usize,
    },
    /// Operation not defined for this loss family.
    UnsupportedLoss(&'static str),
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Schedule evaluated with a zero-length horizon.
    BadSchedule,
    BadParams(String),
    /// Batch spec cannot be satisfied by the dataset.
    Infeasible(String),
    /// Retrieval cutoff incompatible with the collection size.
    BadK {
        k: usize,
        len: usize,
    },
    /// k-means produced an empty cluster twice in a row.
    DegenerateClustering,
    /// A non-finite value appeared where a finite one is required.
    NonFinite(&'static str),
    /// Pair-gradient reconstruction disagrees with the stored gradient.
    ReconstructionMismatch {
        max_rel: f64,
    },
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::ZeroNorm => write!(f, "embedding norm is (numerically) zero"),
            Error::InvalidTriplet { index } => {
                write!(f, "triplet {index} violates y_a == y_p != y_n")
            }
            Error::NoValidPairs => write!(f, "batch labels admit no valid pairs"),
            Error::BadLabel { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::UnsupportedLoss(what) => write!(f, "operation unsupported for {what}"),
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected:?}, got {got:?}")
            }
            Error::BadSchedule => write!(f, "schedule horizon must be positive"),
            Error::BadParams(msg) => write!(f, "bad parameters: {msg}"),
            Error::Infeasible(msg) => write!(f, "infeasible batch spec: {msg}"),
            Error::BadK { k, len } => write!(f, "k = {k} invalid for {len} samples"),
            Error::DegenerateClustering => write!(f, "k-means cluster emptied after re-seed"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::ReconstructionMismatch { max_rel } => {
                write!(
                    f,
                    "pair-gradient reconstruction off by {max_rel:.3e} relative"
                )
            }
        }
    }
}

impl std::error::Error for Error {}
