use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{fit_binned, AngleEstimator, BinnedEstimator, SmoothL1Config, TrainingSample, DEFAULT_BINS};
use crate::evaluation::median;
use crate::robust_selfsup::{process_tracks, ObservationTrack, SelfSupError, Thresholds};

#[derive(Debug, Clone, PartialEq)]
pub struct CycleConfig {
    pub cycles: usize,
    pub thresholds: Thresholds,
    pub bins: usize,
    pub loss: SmoothL1Config,
    /// Fraction of tracks held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            cycles: 5,
            thresholds: Thresholds::default(),
            bins: DEFAULT_BINS,
            loss: SmoothL1Config::default(),
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    /// 1-based cycle number.
    pub cycle: usize,
    pub model: BinnedEstimator,
    pub median_error_deg: f64,
    pub tracks_kept: usize,
    pub tracks_removed: usize,
    pub entries_pruned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    /// Validation error of the initial estimator.
    pub initial_error_deg: f64,
    pub train_tracks: usize,
    pub validation_tracks: usize,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CycleError {
    #[error("cycle count must be at least 1")]
    ZeroCycles,
    #[error("validation fraction must lie in (0, 1), got {0}")]
    InvalidSplit(f64),
    #[error("need at least one training and one validation track, got {0} tracks")]
    TooFewTracks(usize),
    #[error("validation frame without ground truth (track {track_id}, frame {frame})")]
    MissingTruth { track_id: u64, frame: u32 },
    #[error("cycle {cycle}: every training track was removed")]
    AllTracksRemoved { cycle: usize, completed: CycleReport },
    #[error("cycle {cycle}: {source}")]
    Pipeline { cycle: usize, source: SelfSupError },
    #[error("cycle {cycle}: {source}")]
    Fit {
        cycle: usize,
        source: super::EstimatorError,
    },
}

/// Seeded split of track indices into `(train, validation)`, both ascending.
pub fn split_tracks(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let n_val = n_val.clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn validation_error(
    tracks: &[&ObservationTrack],
    est: &dyn AngleEstimator,
    cycle: usize,
) -> Result<f64, CycleError> {
    let mut errs = Vec::new();
    for t in tracks {
        for f in &t.frames {
            let truth = f.truth_local.ok_or(CycleError::MissingTruth {
                track_id: t.track_id,
                frame: f.frame,
            })?;
            let pred = est.estimate(&f.crop).map_err(|source| CycleError::Fit { cycle, source })?;
            errs.push(pred.distance(truth).to_degrees());
        }
    }
    Ok(median(&mut errs))
}

/// Iterative re-computation: cycle `i` builds targets with `M_{i−1}`, fits
/// `M_i` on them and scores `M_i` on the held-out tracks.
pub fn run_cycles(
    tracks: &[ObservationTrack],
    initial: &dyn AngleEstimator,
    cfg: &CycleConfig,
) -> Result<CycleReport, CycleError> {
    if cfg.cycles == 0 {
        return Err(CycleError::ZeroCycles);
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(CycleError::InvalidSplit(cfg.validation_fraction));
    }
    if tracks.len() < 2 {
        return Err(CycleError::TooFewTracks(tracks.len()));
    }
    let (train_idx, val_idx) = split_tracks(tracks.len(), cfg.validation_fraction, cfg.seed);
    let train: Vec<ObservationTrack> = train_idx.iter().map(|&i| tracks[i].clone()).collect();
    let val: Vec<&ObservationTrack> = val_idx.iter().map(|&i| &tracks[i]).collect();

    let mut report = CycleReport {
        initial_error_deg: validation_error(&val, initial, 0)?,
        train_tracks: train.len(),
        validation_tracks: val.len(),
        cycles: Vec::with_capacity(cfg.cycles),
    };

    let mut latest: Option<BinnedEstimator> = None;
    for cycle in 1..=cfg.cycles {
        let current: &dyn AngleEstimator = match &latest {
            Some(m) => m,
            None => initial,
        };
        let results = process_tracks(&train, current, &cfg.thresholds)
            .map_err(|source| CycleError::Pipeline { cycle, source })?;
        let removed = results.iter().filter(|r| r.bias.removed).count();
        if removed == results.len() {
            return Err(CycleError::AllTracksRemoved {
                cycle,
                completed: report,
            });
        }
        let entries_pruned = results
            .iter()
            .filter(|r| !r.bias.removed)
            .map(|r| r.bias.pruned.len())
            .sum();
        let samples: Vec<TrainingSample> = train
            .iter()
            .zip(&results)
            .flat_map(|(t, r)| {
                t.frames.iter().zip(&r.targets.entries).map(|(f, e)| TrainingSample {
                    feature: f.crop.feature,
                    target: e.local,
                    weight: e.weight,
                })
            })
            .collect();
        let model = fit_binned(&samples, cfg.bins, &cfg.loss)
            .map_err(|source| CycleError::Fit { cycle, source })?;
        let median_error_deg = validation_error(&val, &model, cycle)?;
        report.cycles.push(CycleRecord {
            cycle,
            model: model.clone(),
            median_error_deg,
            tracks_kept: results.len() - removed,
            tracks_removed: removed,
            entries_pruned,
        });
        latest = Some(model);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_tracks(50, 0.2, 3);
        let (c, d) = split_tracks(50, 0.2, 3);
        assert_eq!((a.clone(), b.clone()), (c, d));
        assert_eq!(b.len(), 10);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(a.len() + b.len(), 50);
        let (t, v) = split_tracks(2, 0.01, 0);
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
