pub mod box_fitter;
pub mod estimator;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod robust_selfsup;
pub mod simulator;
