//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enumeration. Variants mirror the failure modes of the
/// individual modules so that callers (and the CLI) can surface the violated
/// invariant by name.
#[derive(Debug, Error)]
pub enum Error {
    /// Edge weights at a node are negative or cannot be normalized.
    #[error("non-probability weights at node {node}: {detail}")]
    NonProbability { node: usize, detail: String },

    /// A leaf was found at a depth different from `T`.
    #[error("ragged tree depth: leaf at depth {found}, expected {expected}")]
    RaggedDepth { found: usize, expected: usize },

    /// Two measures do not share the same number of stages / state dimension.
    #[error("shape mismatch: ({t_left},{d_left}) vs ({t_right},{d_right})")]
    ShapeMismatch {
        t_left: usize,
        d_left: usize,
        t_right: usize,
        d_right: usize,
    },

    /// Stage index outside `1..=T`.
    #[error("bad stage {stage}, must be in 1..={t}")]
    BadStage { stage: usize, t: usize },

    /// Transportation problem with empty support.
    #[error("degenerate transport instance: {0}")]
    Degenerate(String),

    /// Transportation instance above the exactness cap.
    #[error("transport instance too large: {rows}x{cols} exceeds cap {cap}x{cap}")]
    InstanceTooLarge { rows: usize, cols: usize, cap: usize },

    /// A tabulated weight is missing for a path prefix.
    #[error("no tabulated weight for prefix of length {len}")]
    MissingWeight { len: usize },

    /// H-function parameters violating `0 <= a <= min(1,b)`, `lambda >= kappa >= 0`.
    #[error("invalid H-function parameters: {0}")]
    InvalidHParams(String),

    /// Oracle grid resolution below the minimum.
    #[error("oracle resolution {0} too coarse, need >= 50")]
    ResolutionTooCoarse(usize),

    /// Kernel order outside the supported range.
    #[error("unsupported kernel order {0} (supported: 1..=6)")]
    UnsupportedOrder(usize),

    /// Bandwidth below the grid cell size.
    #[error("bandwidth {h} too small for cell size {cell}")]
    BandwidthTooSmall { h: f64, cell: f64 },

    /// Grid with too few cells per axis for finite differences.
    #[error("grid too coarse: {0} cells on axis, need >= 8")]
    GridTooCoarse(usize),

    /// Two grids with different extents or cell counts.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Example 3.5 / 3.6 / 4.3 parameter out of range.
    #[error("invalid epsilon: {0}")]
    InvalidEpsilon(String),

    /// Example 4.3 mesh coarser than `eps / 20`.
    #[error("mesh too coarse: {mesh}, need <= {max}")]
    MeshTooCoarse { mesh: f64, max: f64 },

    /// Wavelet estimator fed samples outside `[0,1]^{dT}`.
    #[error("sample outside the unit box at coordinate {0}")]
    SampleOutOfBox(f64),

    /// Malformed input file / JSON.
    #[error("parse error: {0}")]
    Parse(String),

    /// I/O error.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
