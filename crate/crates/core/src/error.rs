//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix/vector dimensions do not line up. Carries a human-readable
    /// description naming the offending layer or operand shapes.
    ShapeMismatch(String),
    /// Power iteration failed to converge; carries the last singular-value
    /// iterate and the final residual.
    NoConvergence { last: f64, residual: f64 },
    /// A normalized diffusion matrix was requested for a graph with an
    /// isolated node (division by zero degree).
    IsolatedNode { node: usize },
    /// Invalid parameter (probability out of range, empty graph, zero
    /// learning rate where positive is required, ...).
    InvalidParameter(String),
    /// An operation that requires smooth (twice-differentiable)
    /// activations was asked to run on a non-smooth one.
    NonSmoothActivation(String),
    /// A bound that requires weight-tied models got an untied model.
    RequiresWeightTying,
    /// GIN classification heads were required but the model has none.
    MissingGinHeads,
    /// Exact per-coordinate trace was requested for a layer that exceeds
    /// the coordinate cap; use the Hutchinson estimator instead.
    LayerTooLarge { layer: usize, params: usize, cap: usize },
    /// Training diverged (non-finite loss) at the given epoch.
    Diverged { epoch: usize },
    /// Class label outside `0..k`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Anything else worth an explicit message.
    Unsupported(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NoConvergence { last, residual } => write!(
                f,
                "power iteration did not converge (last iterate {last}, residual {residual})"
            ),
            Error::IsolatedNode { node } => write!(
                f,
                "node {node} is isolated; normalized diffusion is undefined without self-loops"
            ),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NonSmoothActivation(name) => write!(
                f,
                "activation `{name}` is not twice-differentiable; smooth-only computation refused"
            ),
            Error::RequiresWeightTying => {
                write!(f, "this bound is defined for weight-tied models only")
            }
            Error::MissingGinHeads => write!(f, "model has no GIN classification heads"),
            Error::LayerTooLarge { layer, params, cap } => write!(
                f,
                "layer {layer} has {params} parameters (cap {cap}); use the Hutchinson estimator"
            ),
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
