use std::path::PathBuf;

/// Errors raised by the pipeline. Display strings are stable and short so the
/// CLI can surface them as one-line diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("invalid fps: {0}")]
    InvalidFps(f64),
    #[error("invalid sample rate: {0}")]
    InvalidSampleRate(u32),
    #[error("block too short: {len} samples (need at least {min})")]
    BlockTooShort { len: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sequence too short: {what} needs at least {min} frames, got {got}")]
    SequenceTooShort {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("numerical blowup in {0}")]
    NumericalBlowup(&'static str),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("bad format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyAudio => "empty_audio",
            Error::InvalidFps(_) => "invalid_fps",
            Error::InvalidSampleRate(_) => "invalid_sample_rate",
            Error::BlockTooShort { .. } => "block_too_short",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::SequenceTooShort { .. } => "sequence_too_short",
            Error::NumericalBlowup(_) => "numerical_blowup",
            Error::NotPsd(_) => "not_psd",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::Format { .. } => "bad_format",
            Error::Version { .. } => "version_mismatch",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
