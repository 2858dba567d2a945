//! Partial identification and estimation of the fraction negatively
//! affected (FNA) by a binary treatment on a binary outcome.
//!
//! * [`bounds`]: pointwise bounds on `P(Y0 = 1, Y1 = 0 | X = x)` given the
//!   two conditional means and a range for the potential-outcome correlation.
//! * [`oracle`]: explicit joint tables, used to check sharpness.
//! * [`nuisance`]: logistic and L1-logistic fits with cross-fitting.
//! * [`estimators`]: influence-function estimators of the averaged bounds.
//! * [`simulation`]: data-generating processes and a Monte Carlo harness.
//! * [`io`]: CSV and JSON input/output.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod io;
pub mod nuisance;
pub mod oracle;
pub mod simulation;
pub mod stats;

pub use bounds::{
    fh_bounds, general_bounds, rho_feasible_range, rho_star_threshold, sensitivity_bounds,
    AssociationMeasures, BoundPair, MarginalPair, RhoInterval,
};
pub use error::{Error, Result};
pub use estimators::{estimate_beta, sensitivity_curve, CurveReport, EstimateReport, InfluenceRow};
pub use nuisance::{cross_fit, CrossFitOptions, Dataset, Eta, ModelSpec, NuisanceFit};
pub use oracle::JointTable;
