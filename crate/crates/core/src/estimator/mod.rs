//! Pluggable local-angle estimators.
//!
//! At desk scale an image crop is stood in for by a [`CropDescriptor`]: a
//! scalar appearance feature derived from the true local angle. Estimators
//! map that feature to a predicted local angle. [`SinusoidalEstimator`] is a
//! fixed analytic model (used for the rough initial estimator), and
//! [`BinnedEstimator`] is the trainable model refit in every cycle.

mod binned;
mod cycling;
mod text;

pub use binned::{fit_binned, BinnedEstimator, TrainingSample, DEFAULT_BINS};
pub use cycling::{
    run_cycles, split_tracks, CycleConfig, CycleError, CycleRecord, CycleReport,
};
pub use text::{EstimatorModel, ESTIMATOR_FORMAT_VERSION};

use thiserror::Error;

use crate::geometry::Angle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("no usable (non-zero weight) training targets")]
    NoTargets,
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("smooth-L1 beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("estimator failed on crop (track {track_id:?}, frame {frame:?}): {reason}")]
    Prediction {
        track_id: Option<u64>,
        frame: Option<u32>,
        reason: String,
    },
    #[error("estimator file: {0}")]
    Format(String),
}

/// Stand-in for an image crop of an observed vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropDescriptor {
    pub feature: Angle,
    pub track_id: Option<u64>,
    pub frame: Option<u32>,
}

impl CropDescriptor {
    pub fn new(feature: Angle) -> Self {
        Self {
            feature,
            track_id: None,
            frame: None,
        }
    }
}

/// Maps a crop to a predicted local angle. Implementations must be
/// deterministic.
pub trait AngleEstimator: Send + Sync {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError>;
}

impl<T: AngleEstimator + ?Sized> AngleEstimator for &T {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError> {
        (**self).estimate(crop)
    }
}

impl<T: AngleEstimator + ?Sized> AngleEstimator for Box<T> {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError> {
        (**self).estimate(crop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinTerm {
    pub amplitude: f64,
    pub frequency: u32,
    pub phase: f64,
}

impl SinTerm {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency as f64 * x + self.phase).sin()
    }
}

/// Predicts `feature + Σ aₖ·sin(fₖ·feature + φₖ)`. With no terms this is the
/// identity reading of the appearance feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SinusoidalEstimator {
    pub terms: Vec<SinTerm>,
}

impl SinusoidalEstimator {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn distortion(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }
}

impl AngleEstimator for SinusoidalEstimator {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError> {
        let x = crop.feature.radians();
        Angle::new(x + self.distortion(x)).map_err(|e| EstimatorError::Prediction {
            track_id: crop.track_id,
            frame: crop.frame,
            reason: e.to_string(),
        })
    }
}

/// Half-width of the quadratic region of the smooth-L1 loss, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothL1Config {
    beta: f64,
}

impl SmoothL1Config {
    pub fn new(beta: f64) -> Result<Self, EstimatorError> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self { beta })
        } else {
            Err(EstimatorError::InvalidBeta(beta))
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for SmoothL1Config {
    /// Quadratic region 20° wide in total.
    fn default() -> Self {
        Self {
            beta: 10f64.to_radians(),
        }
    }
}

pub fn smooth_l1(residual: f64, cfg: &SmoothL1Config) -> f64 {
    let e = residual.abs();
    if e <= cfg.beta {
        e * e / (2.0 * cfg.beta)
    } else {
        e - 0.5 * cfg.beta
    }
}
