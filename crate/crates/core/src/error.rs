use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Shape(String),
    /// A value is outside the mathematical domain of the operation
    /// (non-finite entries, non-positive denominators, support violations).
    Domain(String),
    /// Inputs violate an operation precondition.
    Validation(String),
    /// Inconsistent decoder or architecture configuration.
    Config(String),
    /// The spectrum has no positive eigenvalue.
    DegenerateSpectrum,
    /// No lifecycle onset could be located; carries the curve that was searched.
    DetectionFailure { reason: String, curve: Vec<f64> },
    /// Exhaustive search refused because the instance is too large.
    Refusal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::DegenerateSpectrum => write!(f, "degenerate spectrum: no positive eigenvalue"),
            Error::DetectionFailure { reason, curve } => {
                write!(f, "stage detection failed ({reason}) on a curve of {} layers", curve.len())
            }
            Error::Refusal(m) => write!(f, "refused: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
