//! Bivariate density estimation from histogram data with tensor-product
//! smoothing splines in the zero-integral (ZB) basis.
//!
//! Densities are handled in clr space, where a probability density on a
//! rectangle becomes a real function with zero integral. The smoothing
//! spline is built directly in a basis whose elements integrate to zero, so
//! every fit is a valid clr density without constraints. A fitted spline can
//! be split into its independent and interactive parts.

pub mod clr;
pub mod decomposition;
pub mod error;
pub mod ingest;
pub mod knots;
pub mod quadrature;
pub mod simulate;
pub mod smoother;
pub mod zb;

pub use clr::{ClrField, DensityGrid, HistogramGrid, Mesh};
pub use decomposition::{DecompositionResult, PartNorms};
pub use error::{Axis, Error, Result};
pub use ingest::{CoeffKind, CoefficientFile, Domain, Neighborhood, SampleSet};
pub use knots::{ExtendedKnots, KnotConfig};
pub use simulate::{BetaParams, ExperimentConfig, IseTable};
pub use smoother::{
    BCoeffs, FitResult, GcvCurve, PenaltyConfig, SmoothingProblem, TensorBasis, TensorBasisSpec,
    ZBCoeffs,
};
pub use zb::AxisBasis;
