//! Orientation, 3D component and detection metrics.
//!
//! Detection metrics follow the KITTI object benchmark for the single class
//! `Car`: greedy score-ordered matching, easy/moderate/hard strata and
//! interpolated average precision.

use rayon::prelude::*;
use thiserror::Error;

use crate::formats::KittiLabel;
use crate::geometry::{iou_2d, iou_3d, iou_bev, Angle};

pub const EVAL_CLASS: &str = "Car";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no angles to compare")]
    Empty,
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
}

/// Median of `values`; the mean of the two middle values for even counts.
/// Sorts in place. Returns NaN for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median wrapped absolute difference, in degrees.
pub fn median_angle_error(predictions: &[Angle], truths: &[Angle]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut errs: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| p.distance(*t).to_degrees())
        .collect();
    Ok(median(&mut errs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCriteria {
    /// 2D IoU needed to pair boxes for component errors.
    pub iou_2d_match: f64,
    /// IoU needed for a true positive in average precision.
    pub iou_positive: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            iou_2d_match: 0.5,
            iou_positive: 0.7,
        }
    }
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameLabels {
    pub id: String,
    pub pred: Vec<KittiLabel>,
    pub gt: Vec<KittiLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentMedians {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees.
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentReport {
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    /// `None` when nothing matched.
    pub medians: Option<ComponentMedians>,
}

/// One-to-one pairs by descending 2D IoU, ties by (pred, gt) index.
pub fn match_by_2d_iou(pred: &[KittiLabel], gt: &[KittiLabel], min_iou: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = iou_2d(&p.bbox, &g.bbox);
            if iou >= min_iou {
                cands.push((iou, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Median absolute errors of matched boxes. Matching is per frame on 2D IoU;
/// unmatched boxes are excluded and counted.
pub fn component_errors(frames: &[FrameLabels], crit: &MatchCriteria) -> ComponentReport {
    let per_frame: Vec<(Vec<[f64; 7]>, usize, usize)> = frames
        .par_iter()
        .map(|f| {
            let pairs = match_by_2d_iou(&f.pred, &f.gt, crit.iou_2d_match);
            let errs = pairs
                .iter()
                .map(|&(i, j)| {
                    let (p, g) = (f.pred[i].box3d(), f.gt[j].box3d());
                    [
                        (p.size.h - g.size.h).abs(),
                        (p.size.w - g.size.w).abs(),
                        (p.size.l - g.size.l).abs(),
                        (p.center[0] - g.center[0]).abs(),
                        (p.center[1] - g.center[1]).abs(),
                        (p.center[2] - g.center[2]).abs(),
                        p.yaw.distance(g.yaw).to_degrees(),
                    ]
                })
                .collect();
            (errs, f.pred.len() - pairs.len(), f.gt.len() - pairs.len())
        })
        .collect();

    let mut cols: [Vec<f64>; 7] = Default::default();
    let (mut unmatched_pred, mut unmatched_gt) = (0, 0);
    for (errs, up, ug) in per_frame {
        unmatched_pred += up;
        unmatched_gt += ug;
        for e in errs {
            for (c, v) in cols.iter_mut().zip(e) {
                c.push(v);
            }
        }
    }
    let matched = cols[0].len();
    let medians = (matched > 0).then(|| {
        let [h, w, l, x, y, z, yaw] = cols.map(|mut c| median(&mut c));
        ComponentMedians { h, w, l, x, y, z, yaw }
    });
    ComponentReport {
        matched,
        unmatched_pred,
        unmatched_gt,
        medians,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn min_height_px(self) -> f64 {
        match self {
            Difficulty::Easy => 40.0,
            Difficulty::Moderate | Difficulty::Hard => 25.0,
        }
    }

    pub fn max_occlusion(self) -> u8 {
        match self {
            Difficulty::Easy => 0,
            Difficulty::Moderate => 1,
            Difficulty::Hard => 2,
        }
    }

    pub fn max_truncation(self) -> f64 {
        match self {
            Difficulty::Easy => 0.15,
            Difficulty::Moderate => 0.30,
            Difficulty::Hard => 0.50,
        }
    }

    /// Whether a ground-truth box counts at this difficulty.
    pub fn admits(self, label: &KittiLabel) -> bool {
        label.bbox.height() >= self.min_height_px()
            && label.occluded <= self.max_occlusion()
            && label.truncated <= self.max_truncation()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    TwoD,
    Bev,
    ThreeD,
}

impl IouMode {
    pub const ALL: [IouMode; 3] = [IouMode::TwoD, IouMode::Bev, IouMode::ThreeD];

    pub fn iou(self, a: &KittiLabel, b: &KittiLabel) -> f64 {
        match self {
            IouMode::TwoD => iou_2d(&a.bbox, &b.bbox),
            IouMode::Bev => iou_bev(&a.box3d(), &b.box3d()),
            IouMode::ThreeD => iou_3d(&a.box3d(), &b.box3d()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IouMode::TwoD => "2d",
            IouMode::Bev => "bev",
            IouMode::ThreeD => "3d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Recall samples 1/40, 2/40, …, 1.
    #[default]
    FortyPoint,
    /// Recall samples 0, 0.1, …, 1.
    ElevenPoint,
}

impl Interpolation {
    pub fn recall_grid(self) -> Vec<f64> {
        match self {
            Interpolation::FortyPoint => (1..=40).map(|i| i as f64 / 40.0).collect(),
            Interpolation::ElevenPoint => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub ap: f64,
    pub num_gt: usize,
    pub num_pred: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// `(recall, precision)` after each counted prediction, in score order.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Hit,
    Miss,
    Ignored,
}

fn is_eval_class(label: &KittiLabel) -> bool {
    label.kind.eq_ignore_ascii_case(EVAL_CLASS)
}

/// Labels each counted prediction of one frame in descending score order.
fn match_frame(
    frame: &FrameLabels,
    mode: IouMode,
    bin: Difficulty,
    threshold: f64,
) -> Vec<(usize, Outcome)> {
    let valid: Vec<bool> = frame
        .gt
        .iter()
        .map(|g| is_eval_class(g) && bin.admits(g))
        .collect();
    let mut order: Vec<usize> = (0..frame.pred.len())
        .filter(|&i| is_eval_class(&frame.pred[i]))
        .collect();
    order.sort_by(|&a, &b| score_of(&frame.pred[b]).total_cmp(&score_of(&frame.pred[a])));
    let mut taken = vec![false; frame.gt.len()];
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        let p = &frame.pred[i];
        let mut best: Option<(f64, usize)> = None;
        let mut hits_ignored = false;
        for (j, g) in frame.gt.iter().enumerate() {
            let iou = mode.iou(p, g);
            if iou < threshold {
                continue;
            }
            if !valid[j] {
                hits_ignored = true;
            } else if !taken[j] && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, j));
            }
        }
        let outcome = if let Some((_, j)) = best {
            taken[j] = true;
            Outcome::Hit
        } else if hits_ignored || p.bbox.height() < bin.min_height_px() {
            Outcome::Ignored
        } else {
            Outcome::Miss
        };
        out.push((i, outcome));
    }
    out
}

/// Ground-truth files carry no score; they rank as certain.
fn score_of(label: &KittiLabel) -> f64 {
    label.score.unwrap_or(1.0)
}

/// Interpolated average precision over all frames for one difficulty.
///
/// Predictions are ranked by descending score; equal scores keep input order
/// (frame order, then line order). Each prediction takes the best unmatched
/// ground truth of its frame with IoU at or above `crit.iou_positive`.
/// Ground truth outside the difficulty, and predictions matching only such
/// boxes, are neither hits nor misses.
pub fn average_precision(
    frames: &[FrameLabels],
    mode: IouMode,
    bin: Difficulty,
    crit: &MatchCriteria,
    interp: Interpolation,
) -> ApReport {
    let outcomes: Vec<Vec<(usize, Outcome)>> = frames
        .par_iter()
        .map(|f| match_frame(f, mode, bin, crit.iou_positive))
        .collect();
    let num_gt: usize = frames
        .iter()
        .map(|f| f.gt.iter().filter(|g| is_eval_class(g) && bin.admits(g)).count())
        .sum();

    // global rank: descending score, then frame, then line
    let mut ranked: Vec<(f64, usize, usize, Outcome)> = Vec::new();
    for (k, (f, outs)) in frames.iter().zip(&outcomes).enumerate() {
        for &(i, o) in outs {
            if o != Outcome::Ignored {
                ranked.push((score_of(&f.pred[i]), k, i, o));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ranked.len());
    for &(_, _, _, o) in &ranked {
        if o == Outcome::Hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if num_gt > 0 {
            curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    let ap = interpolated_ap(&curve, interp);
    ApReport {
        ap,
        num_gt,
        num_pred: ranked.len(),
        true_positives: tp,
        false_positives: fp,
        curve,
    }
}

/// Mean over the recall grid of the best precision reached at or beyond each
/// recall sample.
pub fn interpolated_ap(curve: &[(f64, f64)], interp: Interpolation) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    // suffix maximum of precision
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for k in (0..curve.len()).rev() {
        best = best.max(curve[k].1);
        envelope[k] = best;
    }
    let grid = interp.recall_grid();
    let total: f64 = grid
        .iter()
        .map(|&r| {
            let k = curve.partition_point(|&(rec, _)| rec < r - 1e-12);
            envelope.get(k).copied().unwrap_or(0.0)
        })
        .sum();
    total / grid.len() as f64
}
