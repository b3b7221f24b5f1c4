//! Gaussian-mixture goal models over the (packet loss, energy) plane.
//!
//! Everything here is a pure function of its inputs.

mod em;
pub mod linalg;
mod model;
mod selection;

pub use em::{fit_gmm, fit_gmm_with, FitOptions, GmmFit};
pub use linalg::{Mat2, Vec2};
pub use model::{ClassId, Classification, GaussianComponent, GmmModel, DEFAULT_OUTLIER_THRESHOLD, OUTLIER_RADIUS};
pub use selection::{
    bic_score, free_parameters, kneedle_elbow, select_component_count, select_components, BicCurve, ComponentSelection,
    DEFAULT_MAX_COMPONENTS, KNEEDLE_SENSITIVITY,
};
