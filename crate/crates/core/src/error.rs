use std::fmt;

/// Errors raised anywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tensors (or a tensor and an operation) disagree on shape.
    Shape { op: &'static str, detail: String },
    /// Batchnorm asked to normalize a channel with fewer than two values.
    DegenerateVariance { channel: usize, count: usize },
    /// A class label outside the logit range, or one that is masked out.
    Label { label: usize, classes: usize },
    /// Backward called on something other than a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A loss or activation became NaN or infinite.
    NonFinite { context: String },
    /// Invalid model, strategy or experiment configuration.
    Config { field: String, message: String },
    /// Config file problem tied to a line.
    Parse { line: usize, message: String },
    /// Malformed dataset, checkpoint or snapshot bytes.
    Format { offset: usize, message: String },
    /// A replay entry lacks data the strategy needs.
    Contract(String),
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::DegenerateVariance { channel, count } => write!(
                f,
                "batchnorm channel {channel} has {count} value(s) in training mode; need at least 2"
            ),
            Error::Label { label, classes } => {
                write!(f, "label {label} is not a valid target among {classes} classes")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::Config { field, message } => write!(f, "config error at `{field}`: {message}"),
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::Format { offset, message } => write!(f, "format error at byte {offset}: {message}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
