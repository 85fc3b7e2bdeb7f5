use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] srgnet_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: row has {found} columns, earlier rows have {expected}")]
    MixedArity {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: negative label {value}")]
    NegativeLabel { path: PathBuf, line: usize, value: i64 },
    #[error("{0}: no labels")]
    NoLabels(PathBuf),
    #[error("palette has {available} colors, {needed} labels to color")]
    PaletteTooSmall { needed: usize, available: usize },
    #[error("palette color {0} repeats an earlier entry")]
    DuplicateColor(usize),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable kind, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => e.kind(),
            Self::Io { .. } => "io",
            Self::Parse { .. } => "parse",
            Self::MixedArity { .. } => "mixed_arity",
            Self::NegativeLabel { .. } => "negative_label",
            Self::NoLabels(_) => "no_labels",
            Self::PaletteTooSmall { .. } => "palette_too_small",
            Self::DuplicateColor(_) => "duplicate_color",
            Self::Config(_) => "config",
        }
    }
}
