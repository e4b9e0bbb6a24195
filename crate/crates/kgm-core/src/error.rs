//! Error type shared by the solver core.

use core::fmt;

/// Everything that can go wrong while building grids or running solves.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Spatial dimension outside the supported set {2, 3}.
    DimUnsupported(usize),
    /// An axis has fewer than three nodes, so there is no interior.
    GridTooSmall { axis: usize, n: usize },
    /// An axis extent is zero or negative.
    NonpositiveExtent { axis: usize },
    /// A field was used in a space it does not live in (e.g. an H^1_0 norm
    /// of a Neumann field).
    SpaceMismatch { expected: &'static str, got: &'static str },
    /// Two fields (or a field and an operator) belong to different grids.
    GridMismatch,
    /// The coupling coefficient vanishes identically, so the screened
    /// operator has the constants in its kernel.
    SingularScreen,
    /// `u` lies outside the admissible set: `||q u||_3` is at or below the
    /// membership tolerance, so the screened solve backing `phi` is
    /// ill-posed.
    OutsideAdmissibleSet { qu_l3: f64, tol: f64 },
    /// An iterative solve hit its iteration cap before reaching tolerance.
    SolverStall { context: &'static str, rel_residual: f64 },
    /// A scalar parameter failed validation.
    BadParameter(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimUnsupported(d) => write!(f, "unsupported dimension {d} (expected 2 or 3)"),
            Error::GridTooSmall { axis, n } => {
                write!(f, "axis {axis} has {n} nodes; at least 3 are required")
            }
            Error::NonpositiveExtent { axis } => {
                write!(f, "axis {axis} has a nonpositive extent")
            }
            Error::SpaceMismatch { expected, got } => {
                write!(f, "field space mismatch: expected {expected}, got {got}")
            }
            Error::GridMismatch => write!(f, "operands live on different grids"),
            Error::SingularScreen => {
                write!(f, "screening coefficient is identically zero; operator is singular")
            }
            Error::OutsideAdmissibleSet { qu_l3, tol } => write!(
                f,
                "field is outside the admissible set: ||q u||_3 = {qu_l3:e} <= {tol:e}"
            ),
            Error::SolverStall { context, rel_residual } => write!(
                f,
                "iterative solver stalled in {context}: relative residual {rel_residual:e}"
            ),
            Error::BadParameter(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for Error {}
