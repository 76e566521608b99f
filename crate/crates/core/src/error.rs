use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A label value is outside `[0, K)`.
    LabelOutOfRange { label: u32, classes: usize },
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        what: &'static str,
        expected: ShapeDesc,
        found: ShapeDesc,
    },
    /// A tensor with a zero-length dimension, or a buffer of the wrong length.
    InvalidShape(&'static str),
    /// Kernel size must be odd and at least 3.
    InvalidKernelSize(usize),
    /// The exponential activation factor must be even and at least 2.
    InvalidExponent(u32),
    /// A configuration value is out of its allowed range.
    InvalidConfig(&'static str),
    /// Ground-truth energies must be integer valued.
    NonIntegerEnergy { index: usize, value: f64 },
    /// A loss or gradient evaluation produced NaN or infinity.
    NonFinite(&'static str),
    /// Training produced a non-finite loss or parameter.
    Diverged { epoch: usize, step: usize },
    /// A scene layout does not fit into the requested image size.
    SceneDoesNotFit(&'static str),
}

/// Compact shape description used in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeDesc(pub [usize; 4]);

impl fmt::Display for ShapeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a}x{b}x{c}x{d}")
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected shape {expected}, found {found}"),
            Error::InvalidShape(what) => write!(f, "invalid shape: {what}"),
            Error::InvalidKernelSize(w) => {
                write!(f, "kernel size {w} must be odd and at least 3")
            }
            Error::InvalidExponent(mu) => {
                write!(f, "activation exponent {mu} must be even and at least 2")
            }
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
            Error::NonIntegerEnergy { index, value } => {
                write!(f, "ground-truth energy {value} at index {index} is not an integer")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Diverged { epoch, step } => {
                write!(f, "training diverged at epoch {epoch}, step {step}")
            }
            Error::SceneDoesNotFit(what) => write!(f, "scene does not fit: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
