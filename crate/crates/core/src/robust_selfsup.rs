//! Self-supervised local-angle targets from ego-motion.
//!
//! For a track of `N` detections of one vehicle, SLAM yields a global-angle
//! sequence `sₙ = −θ_slam(tₙ)` that is correct up to an unknown constant
//! bias, and a rough estimator yields global estimates `rₙ` with outliers.
//! The bias is recovered from the differences `dₙ = rₙ ⊖ sₙ` by iterative
//! pruning of the most inconsistent entry, and whole tracks whose most
//! consistent entries still disagree are discarded.
//!
//! All differences are circular: `|a − b|` means `|wrap(a − b)|`.

use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{AngleEstimator, CropDescriptor, EstimatorError};
use crate::geometry::{
    angle_diff, circular_mean, global_from_local, local_from_global, ray_angle, Angle, Box2D,
    CameraIntrinsics,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelfSupError {
    #[error("inconsistency scores need at least 2 indices, got {0}")]
    TooFewIndices(usize),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("track {0} has no frames")]
    EmptyTrack(u64),
    #[error("track {track_id}: timestamps must be strictly increasing (frame {frame})")]
    NonMonotonicTime { track_id: u64, frame: u32 },
    #[error("invalid thresholds: t_p = {t_p} (needs ≥ 1), t_r = {t_r} (needs > 0)")]
    InvalidThresholds { t_p: f64, t_r: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// One detection of a tracked vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame: u32,
    pub timestamp: f64,
    pub bbox: Box2D,
    pub slam_yaw: Angle,
    pub cam: CameraIntrinsics,
    pub crop: CropDescriptor,
    /// Precomputed rough local angle, when an external estimator supplied one.
    pub rough_local: Option<Angle>,
    /// Ground-truth local angle, available for simulated data only.
    pub truth_local: Option<Angle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTrack {
    pub track_id: u64,
    pub frames: Vec<TrackFrame>,
}

impl ObservationTrack {
    pub fn new(track_id: u64, frames: Vec<TrackFrame>) -> Result<Self, SelfSupError> {
        if frames.is_empty() {
            return Err(SelfSupError::EmptyTrack(track_id));
        }
        for w in frames.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(SelfSupError::NonMonotonicTime {
                    track_id,
                    frame: w[1].frame,
                });
            }
        }
        Ok(Self { track_id, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    t_p: f64,
    t_r: f64,
}

impl Thresholds {
    /// `t_p` is dimensionless, `t_r` in radians.
    pub fn new(t_p: f64, t_r: f64) -> Result<Self, SelfSupError> {
        if t_p >= 1.0 && t_r > 0.0 && t_p.is_finite() && t_r.is_finite() {
            Ok(Self { t_p, t_r })
        } else {
            Err(SelfSupError::InvalidThresholds { t_p, t_r })
        }
    }

    pub fn t_p(&self) -> f64 {
        self.t_p
    }

    pub fn t_r(&self) -> f64 {
        self.t_r
    }
}

impl Default for Thresholds {
    /// `t_p = 1.0`, `t_r = 1°`.
    fn default() -> Self {
        Self {
            t_p: 1.0,
            t_r: 1f64.to_radians(),
        }
    }
}

/// SLAM-derived and rough global sequences of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSequences {
    pub s: Vec<Angle>,
    pub r: Vec<Angle>,
    /// `d[k] = wrap(r[k] − s[k])`, in radians.
    pub d: Vec<f64>,
}

impl AngleSequences {
    pub fn from_parts(s: Vec<Angle>, r: Vec<Angle>) -> Self {
        assert_eq!(s.len(), r.len(), "sequence lengths differ");
        let d = s
            .iter()
            .zip(&r)
            .map(|(&s, &r)| angle_diff(r, s).radians())
            .collect();
        Self { s, r, d }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Observed global-yaw change of a stationary vehicle between two frames,
/// from the ego yaws at those frames: `θ_slam(tᵢ) − θ_slam(tⱼ)`.
pub fn slam_global_delta(slam_i: Angle, slam_j: Angle) -> Angle {
    slam_i - slam_j
}

/// `sₙ = −θ_slam(tₙ)` and `rₙ = θ_r(tₙ) + M(cropₙ)`.
pub fn build_sequences(
    track: &ObservationTrack,
    estimator: &dyn AngleEstimator,
) -> Result<AngleSequences, SelfSupError> {
    let mut s = Vec::with_capacity(track.len());
    let mut r = Vec::with_capacity(track.len());
    for f in &track.frames {
        s.push(-f.slam_yaw);
        let local = estimator.estimate(&f.crop)?;
        r.push(global_from_local(local, ray_angle(&f.bbox, &f.cam)));
    }
    Ok(AngleSequences::from_parts(s, r))
}

/// Same as [`build_sequences`] but reading the rough local angles stored on
/// the frames. `None` if any frame lacks one.
pub fn build_sequences_from_rough(track: &ObservationTrack) -> Option<AngleSequences> {
    let mut s = Vec::with_capacity(track.len());
    let mut r = Vec::with_capacity(track.len());
    for f in &track.frames {
        s.push(-f.slam_yaw);
        r.push(global_from_local(f.rough_local?, ray_angle(&f.bbox, &f.cam)));
    }
    Some(AngleSequences::from_parts(s, r))
}

fn circ_dist(a: f64, b: f64) -> f64 {
    Angle::wrap(a - b).radians().abs()
}

/// `Iᵢ = Σ_{j∈S} |dⱼ − dᵢ|` for every `i ∈ S`, returned in the order of `set`.
pub fn inconsistency_scores(d: &[f64], set: &[usize]) -> Result<Vec<f64>, SelfSupError> {
    if set.len() < 2 {
        return Err(SelfSupError::TooFewIndices(set.len()));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= d.len()) {
        return Err(SelfSupError::IndexOutOfRange(bad));
    }
    Ok(set
        .iter()
        .map(|&i| set.iter().map(|&j| circ_dist(d[j], d[i])).sum())
        .collect())
}

/// Outcome of iterative pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneTrace {
    /// Surviving indices, ascending.
    pub kept: Vec<usize>,
    /// Removed indices in removal order.
    pub pruned: Vec<usize>,
}

impl PruneTrace {
    /// The last visited set with at least three members: `kept` itself, or
    /// `kept` plus the final pruned index when pruning went down to two.
    pub fn consistency_pool(&self) -> Vec<usize> {
        if self.kept.len() >= 3 || self.pruned.is_empty() {
            return self.kept.clone();
        }
        let mut pool = self.kept.clone();
        pool.push(*self.pruned.last().unwrap_or(&0));
        pool.sort_unstable();
        pool
    }
}

/// Inconsistency scores at or below this (per member, radians) count as zero.
pub const SCORE_EPSILON: f64 = 1e-9;

/// Angle residuals below this (radians) count as agreement.
const AGREEMENT_EPSILON: f64 = 1e-12;

/// Removes the most inconsistent entry while `I_max / I_min > t_p` and more
/// than two entries remain. Ties resolve to the lowest index; `I_min = 0`
/// with `I_max > 0` counts as an infinite ratio, all-zero scores stop.
pub fn prune_sequence(d: &[f64], t_p: f64) -> PruneTrace {
    let mut kept: Vec<usize> = (0..d.len()).collect();
    let mut pruned = Vec::new();
    while kept.len() > 2 {
        let scores = match inconsistency_scores(d, &kept) {
            Ok(s) => s,
            Err(_) => break,
        };
        let (mut i_max, mut i_min) = (0, 0);
        for (pos, &v) in scores.iter().enumerate() {
            if v > scores[i_max] {
                i_max = pos;
            }
            if v < scores[i_min] {
                i_min = pos;
            }
        }
        let (hi, lo) = (scores[i_max], scores[i_min]);
        // scores this small are rounding noise from wrapping
        let tiny = SCORE_EPSILON * kept.len() as f64;
        let prune = if hi <= tiny {
            false
        } else if lo <= tiny {
            true
        } else {
            hi / lo > t_p
        };
        if !prune {
            break;
        }
        pruned.push(kept.remove(i_max));
    }
    PruneTrace { kept, pruned }
}

/// Removal test over the three most consistent members of `pool`:
/// `Σ_{i,j∈S₃} |dⱼ − dᵢ| > 6·t_r` with the sum over ordered pairs. Pools
/// with fewer than three members are always removed.
pub fn should_remove(d: &[f64], pool: &[usize], t_r: f64) -> bool {
    if pool.len() < 3 {
        return true;
    }
    let scores = match inconsistency_scores(d, pool) {
        Ok(s) => s,
        Err(_) => return true,
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(pool[a].cmp(&pool[b])));
    let s3: Vec<usize> = order[..3].iter().map(|&p| pool[p]).collect();
    let total: f64 = s3
        .iter()
        .flat_map(|&i| s3.iter().map(move |&j| (i, j)))
        .map(|(i, j)| circ_dist(d[j], d[i]))
        .sum();
    total > 6.0 * t_r
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    pub kept: Vec<usize>,
    pub pruned: Vec<usize>,
    pub b_hat: Angle,
    pub removed: bool,
    /// Final inconsistency scores, aligned with `kept`.
    pub scores: Vec<f64>,
}

/// Prunes, averages the surviving differences on the circle and applies the
/// removal test. Tracks shorter than three are always removed.
pub fn estimate_bias(seq: &AngleSequences, th: &Thresholds) -> BiasEstimate {
    let d = &seq.d;
    let trace = if d.len() >= 2 {
        prune_sequence(d, th.t_p())
    } else {
        PruneTrace {
            kept: (0..d.len()).collect(),
            pruned: Vec::new(),
        }
    };
    let b_hat = circular_mean(trace.kept.iter().map(|&i| Angle::wrap(d[i])))
        .or_else(|| trace.kept.first().map(|&i| Angle::wrap(d[i])))
        .unwrap_or(Angle::ZERO);
    let removed = d.len() < 3 || should_remove(d, &trace.consistency_pool(), th.t_r());
    let scores = inconsistency_scores(d, &trace.kept).unwrap_or_else(|_| vec![0.0; trace.kept.len()]);
    BiasEstimate {
        kept: trace.kept,
        pruned: trace.pruned,
        b_hat,
        removed,
        scores,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEntry {
    pub frame: u32,
    pub timestamp: f64,
    pub global: Angle,
    pub local: Angle,
    /// 1 for usable targets, 0 for frames of removed tracks.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSupTargets {
    pub track_id: u64,
    pub entries: Vec<TargetEntry>,
}

/// Global target `sₙ + b̂` per frame, converted to a local target with the
/// frame's ray angle.
pub fn compute_targets(
    track: &ObservationTrack,
    est: &BiasEstimate,
    seq: &AngleSequences,
) -> SelfSupTargets {
    let weight = if est.removed { 0.0 } else { 1.0 };
    let entries = track
        .frames
        .iter()
        .zip(&seq.s)
        .map(|(f, &s)| {
            let global = s + est.b_hat;
            TargetEntry {
                frame: f.frame,
                timestamp: f.timestamp,
                global,
                local: local_from_global(global, ray_angle(&f.bbox, &f.cam)),
                weight,
            }
        })
        .collect();
    SelfSupTargets {
        track_id: track.track_id,
        entries,
    }
}

/// Everything computed for one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub sequences: AngleSequences,
    pub bias: BiasEstimate,
    pub targets: SelfSupTargets,
}

pub fn process_track(
    track: &ObservationTrack,
    estimator: &dyn AngleEstimator,
    th: &Thresholds,
) -> Result<TrackResult, SelfSupError> {
    let sequences = build_sequences(track, estimator)?;
    Ok(finish_track(track, sequences, th))
}

pub fn finish_track(
    track: &ObservationTrack,
    sequences: AngleSequences,
    th: &Thresholds,
) -> TrackResult {
    let bias = estimate_bias(&sequences, th);
    let targets = compute_targets(track, &bias, &sequences);
    TrackResult {
        sequences,
        bias,
        targets,
    }
}

/// Processes tracks in parallel; output order follows input order.
pub fn process_tracks(
    tracks: &[ObservationTrack],
    estimator: &dyn AngleEstimator,
    th: &Thresholds,
) -> Result<Vec<TrackResult>, SelfSupError> {
    tracks
        .par_iter()
        .map(|t| process_track(t, estimator, th))
        .collect()
}

/// Two observations of one vehicle, each as `(truth, prediction)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationPair {
    pub first: (Angle, Angle),
    pub second: (Angle, Angle),
}

/// Fraction of difference-supervision corrections that push a prediction
/// away from its own ground truth.
///
/// Matching the predicted difference `p₂ − p₁` to the true difference
/// `t₂ − t₁` moves `p₂` along `sign((t₂ − t₁) − (p₂ − p₁))` and `p₁` the
/// opposite way. A correction is wrong when its sign differs from the sign
/// of `tₖ − pₖ`. Pairs whose differences already agree contribute nothing;
/// with no corrections at all the fraction is 0.
pub fn siamese_gradient_direction_stats(pairs: &[ObservationPair]) -> f64 {
    let (mut total, mut wrong) = (0usize, 0usize);
    for p in pairs {
        let (t1, p1) = p.first;
        let (t2, p2) = p.second;
        let residual = ((t2 - t1) - (p2 - p1)).radians();
        if residual.abs() <= AGREEMENT_EPSILON {
            continue;
        }
        let push_second = residual.signum();
        for (truth, pred, push) in [(t2, p2, push_second), (t1, p1, -push_second)] {
            total += 1;
            let needed = (truth - pred).radians();
            if needed.abs() <= AGREEMENT_EPSILON || needed.signum() != push {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}
