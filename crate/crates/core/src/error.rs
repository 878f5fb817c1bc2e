use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation: orthonormality error {ortho_err:.3e}, det {det:.12}")]
    NotOrthonormal { ortho_err: f64, det: f64 },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("representation mismatch: {0} vs {1}")]
    RepresentationMismatch(String, String),

    #[error("unknown representation tag `{0}` (expected matrix, quat or aa)")]
    UnknownRepresentation(String),

    #[error("empty joint subset")]
    EmptySubset,

    #[error("joint index {index} out of range for a tree of {joints} joints")]
    JointOutOfRange { index: usize, joints: usize },

    #[error("subset preset `{preset}` is incompatible with this tree: {reason}")]
    PresetIncompatible { preset: String, reason: String },

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("invalid body shape: {0}")]
    InvalidShape(String),

    #[error("batch size must be even for within-batch augmentation, got {0}")]
    OddBatch(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("line {line}: {path}: {message}")]
    Parse {
        line: usize,
        path: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotOrthonormal { .. } => "not_orthonormal",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::RepresentationMismatch(..) => "representation_mismatch",
            Error::UnknownRepresentation(_) => "unknown_representation",
            Error::EmptySubset => "empty_subset",
            Error::JointOutOfRange { .. } => "joint_out_of_range",
            Error::PresetIncompatible { .. } => "preset_incompatible",
            Error::InvalidTree(_) => "invalid_tree",
            Error::InvalidShape(_) => "invalid_shape",
            Error::OddBatch(_) => "odd_batch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidSequence(_) => "invalid_sequence",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::LengthMismatch {
            what,
            expected,
            found,
        }
    }
}
