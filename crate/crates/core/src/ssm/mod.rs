//! Linear-Gaussian state-space models and the Kalman filter.

mod collapse;
mod filter;
mod model;
mod simulate;
mod smoother;

pub use collapse::{collapse_rows, Collapsed};
pub use filter::{filter, filter_with, loglik_at, standardize, DiffuseMethod, FilterOptions, FilterOutput};
pub use simulate::simulate;
pub use smoother::{smooth, SmootherOutput};
pub use model::{check_psd, Initialization, Measurement, StateInit, StateSpaceModel};
