use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },
    /// A reduction or split received no rows.
    EmptyInput(&'static str),
    /// A class label is outside `[0, classes)`.
    Label { label: usize, classes: usize },
    /// An operation produced NaN or an infinity.
    NumericOverflow(&'static str),
    /// A caller-side precondition does not hold.
    Contract(String),
    /// Prototype sets or uploads disagree with the round protocol.
    Protocol(String),
    /// A binary payload could not be decoded.
    Format { offset: usize, message: String },
}

impl Error {
    pub(crate) fn dimension(op: &'static str, left: impl fmt::Debug, right: impl fmt::Debug) -> Self {
        Error::Dimension {
            op,
            left: alloc::format!("{left:?}"),
            right: alloc::format!("{right:?}"),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left} and {right}")
            }
            Error::EmptyInput(op) => write!(f, "{op}: empty input"),
            Error::Label { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::NumericOverflow(op) => write!(f, "{op}: non-finite value produced"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
        }
    }
}

impl core::error::Error for Error {}
