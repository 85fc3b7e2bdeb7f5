use alloc::string::String;

/// Errors raised by the segmentation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("normal at point {index} has length {norm}, expected 1")]
    NormalLengthViolation { index: usize, norm: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("k = {k} is too large for {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("point cloud has no normals")]
    MissingNormals,
    #[error("label {label} out of range for {k} label slots")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("parameter `{name}` has no gradient")]
    MissingGrad { name: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("training diverged at iteration {iteration}: non-finite {what}")]
    Diverged { iteration: usize, what: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    /// Short snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyCloud => "empty_cloud",
            Self::NonFinite { .. } => "non_finite",
            Self::NormalLengthViolation { .. } => "normal_length",
            Self::LengthMismatch { .. } => "length_mismatch",
            Self::KTooLarge { .. } => "k_too_large",
            Self::MissingNormals => "missing_normals",
            Self::LabelOutOfRange { .. } => "label_out_of_range",
            Self::ShapeMismatch(_) => "shape_mismatch",
            Self::TargetOutOfRange { .. } => "target_out_of_range",
            Self::MissingGrad { .. } => "missing_grad",
            Self::DuplicateParam(_) => "duplicate_param",
            Self::Diverged { .. } => "diverged",
            Self::InvalidParam(_) => "invalid_param",
        }
    }
}
