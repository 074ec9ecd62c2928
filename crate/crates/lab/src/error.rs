use std::path::PathBuf;

/// Failure categories of a dataset file; each maps to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataErrorKind {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    TrailingBytes,
    LabelRange,
    PixelRange,
    Empty,
}

impl DataErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            Self::BadMagic => "bad-magic",
            Self::UnsupportedVersion => "unsupported-version",
            Self::Truncated => "truncated",
            Self::TrailingBytes => "trailing-bytes",
            Self::LabelRange => "label-range",
            Self::PixelRange => "pixel-range",
            Self::Empty => "empty",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("data [{}]: {msg}", kind.code())]
    Data { kind: DataErrorKind, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: float_core::Error,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn data(kind: DataErrorKind, msg: impl Into<String>) -> Self {
        Self::Data { kind, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit code.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 2 | invalid configuration or arguments |
    /// | 3 | numeric failure (non-finite values) |
    /// | 4 | IO failure |
    /// | 5 | unreadable or inconsistent checkpoint |
    /// | 6 | internal state error |
    /// | 10-16 | dataset errors, one per [`DataErrorKind`] |
    pub fn exit_code(&self) -> i32 {
        use float_core::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Data { kind, .. } => match kind {
                DataErrorKind::BadMagic => 10,
                DataErrorKind::UnsupportedVersion => 11,
                DataErrorKind::Truncated => 12,
                DataErrorKind::TrailingBytes => 13,
                DataErrorKind::LabelRange => 14,
                DataErrorKind::PixelRange => 15,
                DataErrorKind::Empty => 16,
            },
            Self::Checkpoint(_) => 5,
            Self::Io { .. } => 4,
            Self::Core { source, .. } => match source {
                E::Config(_) | E::Dimension(_) | E::Range(_) => 2,
                E::Numeric(_) => 3,
                E::Empty(_) => 16,
                E::State(_) => 6,
            },
        }
    }
}

/// Attaches the failing stage to a core error.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> Stage<T> for float_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| LabError::Core { stage, source })
    }
}
