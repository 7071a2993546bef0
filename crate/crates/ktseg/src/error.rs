use std::path::PathBuf;

/// Errors raised by file formats, pipelines and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum KtError {
    #[error(transparent)]
    Core(#[from] ktseg_core::Error),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("duplicate sample id `{0}` in manifest")]
    DuplicateId(String),
    #[error("record `{sample_id}` points at missing file {}", path.display())]
    DanglingPath { sample_id: String, path: PathBuf },
    #[error("record `{0}` has no mask")]
    Unlabeled(String),
    #[error("cannot decode image {}: {message}", path.display())]
    ImageDecode { path: PathBuf, message: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint {}: {message}", path.display())]
    CheckpointCorrupt { path: PathBuf, message: String },
    #[error("no kept records in manifest `{0}`")]
    NothingKept(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl KtError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingFile(path)
        } else {
            Self::Io { path, source }
        }
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => match e {
                ktseg_core::Error::UnknownArchitecture { .. } => "unknown_architecture",
                ktseg_core::Error::ArchitectureMismatch { .. } => "architecture_mismatch",
                ktseg_core::Error::ShapeMismatch { .. } => "shape_mismatch",
                ktseg_core::Error::InvalidConfig(_) => "invalid_config",
                _ => "invalid_input",
            },
            Self::MissingFile(_) => "missing_file",
            Self::Io { .. } => "io",
            Self::Parse { .. } => "parse",
            Self::DuplicateId(_) => "duplicate_id",
            Self::DanglingPath { .. } => "dangling_path",
            Self::Unlabeled(_) => "unlabeled_record",
            Self::ImageDecode { .. } => "image_decode",
            Self::CheckpointVersion { .. } => "checkpoint_version",
            Self::CheckpointCorrupt { .. } => "checkpoint_corrupt",
            Self::NothingKept(_) => "nothing_kept",
            Self::InvalidArgument(_) => "invalid_argument",
        }
    }
}

pub type Result<T, E = KtError> = std::result::Result<T, E>;
