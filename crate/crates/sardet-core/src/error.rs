//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor, model, data and evaluation layers.
#[derive(Debug)]
pub enum Error {
    /// An operation received tensors whose shapes do not conform.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// An operation produced a NaN or infinity.
    NonFinite { op: String },
    /// Training aborted because a loss component stopped being finite.
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },
    /// A network description does not produce a valid model.
    InvalidArchitecture {
        layer: Option<usize>,
        detail: String,
    },
    /// A backward pass was requested on a tape that cannot serve it.
    Tape { detail: String },
    /// A computation that needs at least one element received none.
    EmptyInput(&'static str),
    /// A configuration value is outside its legal range.
    InvalidParam { name: &'static str, detail: String },
    /// A coordinate or label fell outside the valid region.
    OutOfBounds { what: &'static str, detail: String },
    /// A textual descriptor failed to parse.
    Parse { what: &'static str, detail: String },
    /// PGM header is malformed at the given byte offset.
    PgmHeader {
        path: PathBuf,
        offset: usize,
        detail: String,
    },
    /// PGM pixel payload ended early.
    PgmTruncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        got: usize,
    },
    /// A manifest row failed to parse.
    ManifestRow {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    /// A manifest row carries a label outside `[0, num_classes)`.
    LabelOutOfRange {
        path: PathBuf,
        line: usize,
        label: i64,
    },
    /// A manifest references an image file that does not exist.
    MissingImage { path: PathBuf, id: String },
    /// Underlying I/O failure, tagged with the path that caused it.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// An internal postcondition did not hold on produced data.
    Postcondition {
        what: &'static str,
        detail: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {got}")
            }
            Error::NonFinite { op } => {
                write!(f, "{op}: produced a non-finite value")
            }
            Error::NonFiniteLoss {
                epoch,
                batch,
                component,
            } => write!(
                f,
                "non-finite loss: component `{component}` at epoch {epoch}, batch {batch}"
            ),
            Error::InvalidArchitecture { layer, detail } => match layer {
                Some(i) => write!(f, "invalid architecture at layer {i}: {detail}"),
                None => write!(f, "invalid architecture: {detail}"),
            },
            Error::Tape { detail } => write!(f, "tape error: {detail}"),
            Error::EmptyInput(what) => write!(f, "{what} must not be empty"),
            Error::InvalidParam { name, detail } => {
                write!(f, "invalid parameter `{name}`: {detail}")
            }
            Error::OutOfBounds { what, detail } => write!(f, "{what} out of bounds: {detail}"),
            Error::Parse { what, detail } => write!(f, "failed to parse {what}: {detail}"),
            Error::PgmHeader {
                path,
                offset,
                detail,
            } => write!(
                f,
                "malformed PGM header in {} at byte {offset}: {detail}",
                path.display()
            ),
            Error::PgmTruncated {
                path,
                offset,
                expected,
                got,
            } => write!(
                f,
                "truncated PGM payload in {} at byte {offset}: expected {expected} bytes, got {got}",
                path.display()
            ),
            Error::ManifestRow { path, line, detail } => write!(
                f,
                "bad manifest row in {} line {line}: {detail}",
                path.display()
            ),
            Error::LabelOutOfRange { path, line, label } => write!(
                f,
                "label {label} out of range in {} line {line}",
                path.display()
            ),
            Error::MissingImage { path, id } => write!(
                f,
                "manifest entry `{id}` references missing image {}",
                path.display()
            ),
            Error::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
            Error::Postcondition { what, detail } => {
                write!(f, "postcondition failed for {what}: {detail}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
