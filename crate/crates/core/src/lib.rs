//! Structural time-series nowcasting with high-dimensional auxiliary panels.
//!
//! The crate covers a diffuse Kalman filter, the rotating-panel labour-force
//! model and its factor extensions, two-step PCA/Kalman factor estimation,
//! unit-root screening, elastic-net targeting, maximum likelihood, recursive
//! mixed-frequency nowcasting, Monte Carlo experiments and normality diagnostics.

pub mod diagnostics;
pub mod error;
pub mod factors;
pub mod io;
pub mod lf_model;
pub mod mcsim;
pub mod mle;
pub mod nowcast;
pub mod panel;
pub mod scalar;
pub mod ssm;
pub mod stationarity;
pub mod targeting;

pub use error::{Error, Result};
pub use panel::Frequency;
pub use scalar::Scalar;

/// `f64` state-space model.
pub type StateSpaceModel = ssm::StateSpaceModel<f64>;
/// `f64` filter output.
pub type FilterOutput = ssm::FilterOutput<f64>;
/// `f64` panel.
pub type Panel = panel::Panel<f64>;
/// `f64` initialization.
pub type Initialization = ssm::Initialization<f64>;
/// `f64` measurement loading.
pub type Measurement = ssm::Measurement<f64>;
