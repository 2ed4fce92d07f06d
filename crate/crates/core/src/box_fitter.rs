//! 3D boxes from 2D detections and a yaw estimate.
//!
//! A box of fixed (median) size is placed on the ray through the detection
//! center and slid along it; the depth maximizing the 2D IoU between the
//! detection and the projected box is found with Nelder–Mead.

use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{AngleEstimator, CropDescriptor, EstimatorError};
use crate::geometry::{
    global_from_local, iou_2d, project_box3d, ray_angle, Angle, Box2D, Box3D, BoxSize,
    CameraIntrinsics,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("objective is not finite at the initial point")]
    NonFiniteStart,
    #[error("initial point must have {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no probed depth yields a projectable box")]
    Unfittable,
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Nelder–Mead coefficients and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexParams {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Offset of the extra vertices from the start point, per coordinate.
    pub initial_step: f64,
    /// Converged once every vertex lies within this distance of the best.
    pub diameter_tol: f64,
    pub max_iterations: usize,
}

impl Default for SimplexParams {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 5.0,
            diameter_tol: 1e-3,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .map(|v| {
            v.iter()
                .zip(best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Minimizes `objective` from `x0`. Infinite values are allowed away from
/// the start and simply lose every comparison.
pub fn nelder_mead<F>(objective: F, x0: &[f64], params: &SimplexParams) -> Result<SimplexResult, FitError>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(FitError::DimensionMismatch { expected: 1, got: 0 });
    }
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(FitError::NonFiniteStart);
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut values = vec![f0];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += params.initial_step;
        values.push(objective(&v));
        simplex.push(v);
    }

    let mut iterations = 0;
    loop {
        // stable sort keeps earlier vertices ahead on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < params.diameter_tol {
            return Ok(SimplexResult {
                x: simplex.swap_remove(0),
                f: values[0],
                iterations,
                converged: true,
            });
        }
        if iterations >= params.max_iterations {
            return Ok(SimplexResult {
                x: simplex.swap_remove(0),
                f: values[0],
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = toward(params.reflection);
        let fr = objective(&xr);
        if fr < values[0] {
            let xe = toward(params.reflection * params.expansion);
            let fe = objective(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = toward(params.reflection * params.contraction);
            let fc = objective(&xc);
            (xc, fc)
        } else {
            let xc = toward(-params.contraction);
            let fc = objective(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for k in 0..n {
                simplex[i][k] = best[k] + params.shrink * (simplex[i][k] - best[k]);
            }
            values[i] = objective(&simplex[i]);
        }
    }
}

/// Median vehicle dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSizePrior(pub BoxSize);

impl Default for VehicleSizePrior {
    /// h 1.53, w 1.63, l 3.88. Confirm against the target dataset.
    fn default() -> Self {
        Self(BoxSize {
            h: 1.53,
            w: 1.63,
            l: 3.88,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub z_init: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub simplex: SimplexParams,
    /// Fits below this IoU are reported as not converged.
    pub min_iou: f64,
    /// Samples of the fallback depth sweep.
    pub sweep_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            z_init: 30.0,
            z_min: 0.5,
            z_max: 300.0,
            simplex: SimplexParams::default(),
            min_iou: 0.1,
            sweep_samples: 600,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.z_min > 0.0 && self.z_min < self.z_max && self.z_max.is_finite()) {
            return Err(FitError::InvalidConfig(format!(
                "depth bounds [{}, {}]",
                self.z_min, self.z_max
            )));
        }
        if !(self.z_init >= self.z_min && self.z_init <= self.z_max) {
            return Err(FitError::InvalidConfig(format!(
                "z_init {} outside [{}, {}]",
                self.z_init, self.z_min, self.z_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub bbox: Box3D,
    pub achieved_iou: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Box of the prior size centered on the detection ray at depth `z`.
pub fn box_from_depth(
    det: &Box2D,
    yaw_global: Angle,
    z: f64,
    prior: &VehicleSizePrior,
    cam: &CameraIntrinsics,
) -> Box3D {
    let [uc, vc] = det.center();
    Box3D {
        center: [(uc - cam.cx) * z / cam.fx, (vc - cam.cy) * z / cam.fy, z],
        size: prior.0,
        yaw: yaw_global,
    }
}

/// Depth with the best 2D IoU between `det` and the projected box.
pub fn fit_box3d(
    det: &Box2D,
    yaw_global: Angle,
    prior: &VehicleSizePrior,
    cam: &CameraIntrinsics,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    cfg.validate()?;
    let iou_at = |z: f64| -> Option<f64> {
        if !(z >= cfg.z_min && z <= cfg.z_max) {
            return None;
        }
        let b = box_from_depth(det, yaw_global, z, prior, cam);
        project_box3d(&b, cam).ok().map(|p| iou_2d(det, &p))
    };
    let objective = |x: &[f64]| iou_at(x[0]).map_or(f64::INFINITY, |v| -v);

    let mut iterations = 0;
    let mut best: Option<(f64, f64)> = None; // (z, iou)
    if iou_at(cfg.z_init).is_some() {
        let r = nelder_mead(objective, &[cfg.z_init], &cfg.simplex)?;
        iterations += r.iterations;
        best = Some((r.x[0], -r.f));
    }

    // Zero-IoU plateaus and unprojectable starts: sweep the bounds for a
    // better basin and restart from there.
    if best.map_or(true, |(_, iou)| iou <= 0.0) {
        let n = cfg.sweep_samples.max(2);
        let (lo, hi) = (cfg.z_min.ln(), cfg.z_max.ln());
        let mut swept: Option<(f64, f64)> = None;
        for k in 0..n {
            let z = (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp();
            if let Some(v) = iou_at(z) {
                if swept.map_or(true, |(_, b)| v > b) {
                    swept = Some((z, v));
                }
            }
        }
        let (z0, v0) = swept.ok_or(FitError::Unfittable)?;
        let mut candidate = (z0, v0);
        if v0 > 0.0 {
            let r = nelder_mead(objective, &[z0], &cfg.simplex)?;
            iterations += r.iterations;
            if -r.f >= v0 {
                candidate = (r.x[0], -r.f);
            }
        }
        if best.map_or(true, |(_, b)| candidate.1 >= b) {
            best = Some(candidate);
        }
    }

    let (z, achieved_iou) = best.ok_or(FitError::Unfittable)?;
    Ok(FitResult {
        bbox: box_from_depth(det, yaw_global, z, prior, cam),
        achieved_iou,
        iterations,
        converged: achieved_iou >= cfg.min_iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box2D,
    pub score: f64,
    pub crop: CropDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedDetection {
    /// Position in the input list.
    pub index: usize,
    pub bbox: Box3D,
    pub local: Angle,
    pub score: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitBatch {
    pub boxes: Vec<FittedDetection>,
    /// Detections that could not be fitted, with the reason.
    pub failures: Vec<(usize, FitError)>,
}

impl FitBatch {
    pub fn dropped(&self) -> usize {
        self.failures.len()
    }
}

/// Ray angle + estimated local angle gives the yaw; each detection is then
/// fitted independently. Failures are collected, not propagated.
pub fn detections_to_boxes(
    dets: &[Detection],
    estimator: &dyn AngleEstimator,
    prior: &VehicleSizePrior,
    cam: &CameraIntrinsics,
    cfg: &FitConfig,
) -> FitBatch {
    let results: Vec<Result<FittedDetection, FitError>> = dets
        .par_iter()
        .enumerate()
        .map(|(index, d)| {
            let local = estimator.estimate(&d.crop)?;
            let yaw = global_from_local(local, ray_angle(&d.bbox, cam));
            let fit = fit_box3d(&d.bbox, yaw, prior, cam, cfg)?;
            Ok(FittedDetection {
                index,
                bbox: fit.bbox,
                local,
                score: d.score,
                fit,
            })
        })
        .collect();
    let mut batch = FitBatch {
        boxes: Vec::new(),
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(b) => batch.boxes.push(b),
            Err(e) => batch.failures.push((i, e)),
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::SinusoidalEstimator;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9).unwrap()
    }

    fn deg(d: f64) -> Angle {
        Angle::from_degrees(d).unwrap()
    }

    #[test]
    fn nm_quadratic_bowl() {
        let p = SimplexParams {
            initial_step: 1.0,
            diameter_tol: 1e-9,
            max_iterations: 500,
            ..Default::default()
        };
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &p).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn nm_rosenbrock() {
        let p = SimplexParams {
            initial_step: 0.5,
            diameter_tol: 1e-10,
            max_iterations: 5000,
            ..Default::default()
        };
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], &p).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn nm_flat_landscape_collapses() {
        let r = nelder_mead(|_| 4.0, &[2.0], &SimplexParams::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() <= 5.0);
        assert_eq!(r.f, 4.0);
    }

    #[test]
    fn nm_rejects_bad_start() {
        assert_eq!(
            nelder_mead(|_| f64::NAN, &[0.0], &SimplexParams::default()),
            Err(FitError::NonFiniteStart)
        );
        assert!(nelder_mead(|_| 0.0, &[], &SimplexParams::default()).is_err());
    }

    #[test]
    fn nm_handles_infinite_walls() {
        let p = SimplexParams {
            initial_step: 5.0,
            diameter_tol: 1e-8,
            ..Default::default()
        };
        let f = |x: &[f64]| if x[0] < 1.0 { f64::INFINITY } else { (x[0] - 1.5).powi(2) };
        let r = nelder_mead(f, &[30.0], &p).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-4);
    }

    #[test]
    fn box_from_depth_examples() {
        let c = cam();
        let centered = Box2D::new(c.cx - 30.0, c.cy - 20.0, c.cx + 30.0, c.cy + 20.0).unwrap();
        let b = box_from_depth(&centered, deg(10.0), 30.0, &VehicleSizePrior::default(), &c);
        assert!(b.center[0].abs() < 1e-12 && b.center[1].abs() < 1e-12);
        assert_eq!(b.center[2], 30.0);
        assert_eq!(b.size, VehicleSizePrior::default().0);
        assert_eq!(b.yaw, deg(10.0));

        let right = Box2D::new(c.cx + c.fx - 5.0, c.cy - 5.0, c.cx + c.fx + 5.0, c.cy + 5.0).unwrap();
        let b = box_from_depth(&right, deg(0.0), 10.0, &VehicleSizePrior::default(), &c);
        assert!((b.center[0] - 10.0).abs() < 1e-12);

        let off = Box2D::new(700.0, 200.0, 760.0, 240.0).unwrap();
        let near = box_from_depth(&off, deg(0.0), 12.0, &VehicleSizePrior::default(), &c);
        let far = box_from_depth(&off, deg(0.0), 24.0, &VehicleSizePrior::default(), &c);
        assert!((far.center[0] - 2.0 * near.center[0]).abs() < 1e-12);
        assert!((far.center[1] - 2.0 * near.center[1]).abs() < 1e-12);
    }

    fn truth_box(x: f64, z: f64, yaw_deg: f64) -> Box3D {
        Box3D {
            center: [x, 1.65 - 0.765, z],
            size: VehicleSizePrior::default().0,
            yaw: deg(yaw_deg),
        }
    }

    #[test]
    fn exact_projection_round_trip() {
        let c = cam();
        // on the optical axis with an axis-aligned yaw the 2D box center is
        // the projection of the 3D center, so the truth lies on the fit ray
        let truth = Box3D {
            center: [0.0, 0.0, 25.0],
            size: VehicleSizePrior::default().0,
            yaw: deg(90.0),
        };
        let det = project_box3d(&truth, &c).unwrap();
        let r = fit_box3d(&det, truth.yaw, &VehicleSizePrior::default(), &c, &FitConfig::default()).unwrap();
        assert!((r.bbox.center[2] - 25.0).abs() < 0.05, "z = {}", r.bbox.center[2]);
        assert!(r.achieved_iou > 0.99);
        assert!(r.converged);
        let again = iou_2d(&det, &project_box3d(&r.bbox, &c).unwrap());
        assert!((again - r.achieved_iou).abs() < 1e-12);
    }

    #[test]
    fn off_axis_cars_are_not_on_the_detection_ray() {
        // The 2D box center is not the image of the 3D center, so a car
        // standing on the ground can't be matched exactly by a box on the ray.
        let c = cam();
        let truth = truth_box(2.0, 25.0, -70.0);
        let det = project_box3d(&truth, &c).unwrap();
        let r = fit_box3d(&det, truth.yaw, &VehicleSizePrior::default(), &c, &FitConfig::default()).unwrap();
        assert!(r.achieved_iou < 0.99);
        assert!(r.converged);
    }

    #[test]
    fn inflated_detection_pulls_box_closer() {
        let c = cam();
        let truth = truth_box(-1.5, 25.0, 30.0);
        let det = project_box3d(&truth, &c).unwrap();
        let [uc, _] = det.center();
        let half = 0.55 * det.width();
        let wide = Box2D::new(uc - half, det.v_min, uc + half, det.v_max).unwrap();
        let prior = VehicleSizePrior::default();
        let r = fit_box3d(&wide, truth.yaw, &prior, &c, &FitConfig::default()).unwrap();
        assert!(r.bbox.center[2] < 25.0);
        // dense sweep oracle agrees on where the optimum sits
        let mut best = (0.0, -1.0);
        let mut z = 0.5;
        while z <= 300.0 {
            let b = box_from_depth(&wide, truth.yaw, z, &prior, &c);
            if let Ok(p) = project_box3d(&b, &c) {
                let v = iou_2d(&wide, &p);
                if v > best.1 {
                    best = (z, v);
                }
            }
            z += 0.01;
        }
        assert!(best.0 < 25.0);
        assert!((r.bbox.center[2] - best.0).abs() < 0.05);
    }

    #[test]
    fn incompatible_detection_does_not_converge() {
        let c = cam();
        // a 1 px tall strip across the image can't be matched by a car
        let det = Box2D::new(10.0, 20.0, 1200.0, 21.0).unwrap();
        let r = fit_box3d(&det, deg(0.0), &VehicleSizePrior::default(), &c, &FitConfig::default()).unwrap();
        assert!(!r.converged);
        assert!(r.achieved_iou < 0.1);
        assert!(r.bbox.center[2] >= 0.5 && r.bbox.center[2] <= 300.0);
    }

    #[test]
    fn oversized_prior_is_unfittable() {
        let c = cam();
        let det = Box2D::new(500.0, 150.0, 560.0, 190.0).unwrap();
        // length along the optical axis puts the rear corners behind the camera
        let huge = VehicleSizePrior(BoxSize::new(1.5, 1.6, 1000.0).unwrap());
        assert_eq!(
            fit_box3d(&det, deg(90.0), &huge, &c, &FitConfig::default()),
            Err(FitError::Unfittable)
        );
    }

    #[test]
    fn size_is_never_changed_and_start_is_not_beaten() {
        let c = cam();
        let prior = VehicleSizePrior::default();
        for (x, z, yaw) in [(3.0, 8.0, 10.0), (-6.0, 40.0, 95.0), (0.5, 70.0, -120.0)] {
            let det = project_box3d(&truth_box(x, z, yaw), &c).unwrap();
            let cfg = FitConfig::default();
            let r = fit_box3d(&det, deg(yaw), &prior, &c, &cfg).unwrap();
            assert_eq!(r.bbox.size, prior.0);
            let start = box_from_depth(&det, deg(yaw), cfg.z_init, &prior, &c);
            let start_iou = iou_2d(&det, &project_box3d(&start, &c).unwrap());
            assert!(r.achieved_iou >= start_iou);
        }
    }

    #[test]
    fn mirrored_detection_mirrors_fit() {
        let c = CameraIntrinsics::new(721.5, 721.5, 600.0, 172.9).unwrap();
        let prior = VehicleSizePrior::default();
        let truth = truth_box(4.0, 18.0, 35.0);
        let det = project_box3d(&truth, &c).unwrap();
        let mirrored = Box2D::new(2.0 * c.cx - det.u_max, det.v_min, 2.0 * c.cx - det.u_min, det.v_max).unwrap();
        let a = fit_box3d(&det, truth.yaw, &prior, &c, &FitConfig::default()).unwrap();
        let b = fit_box3d(&mirrored, -truth.yaw, &prior, &c, &FitConfig::default()).unwrap();
        assert!((a.bbox.center[0] + b.bbox.center[0]).abs() < 1e-3);
        assert!((a.bbox.center[2] - b.bbox.center[2]).abs() < 1e-3);
    }

    #[test]
    fn batch_examples() {
        let c = cam();
        let prior = VehicleSizePrior::default();
        let est = SinusoidalEstimator::identity();
        let empty = detections_to_boxes(&[], &est, &prior, &c, &FitConfig::default());
        assert!(empty.boxes.is_empty() && empty.dropped() == 0);

        let truth = Box3D {
            center: [0.0, 0.0, 20.0],
            size: VehicleSizePrior::default().0,
            yaw: deg(0.0),
        };
        let det = project_box3d(&truth, &c).unwrap();
        let local = truth.yaw - ray_angle(&det, &c);
        let d = Detection {
            bbox: det,
            score: 0.9,
            crop: CropDescriptor::new(local),
        };
        let out = detections_to_boxes(&[d, d], &est, &prior, &c, &FitConfig::default());
        assert_eq!(out.boxes.len(), 2);
        assert_eq!(out.boxes[0].bbox, out.boxes[1].bbox);
        let b = out.boxes[0].bbox;
        let dist = ((b.center[0] - truth.center[0]).powi(2)
            + (b.center[1] - truth.center[1]).powi(2)
            + (b.center[2] - truth.center[2]).powi(2))
        .sqrt();
        assert!(dist < 0.1, "center off by {dist}");
        assert!(b.yaw.distance(truth.yaw) < 1e-12);
        assert_eq!(out.boxes[1].index, 1);
        assert_eq!(out.boxes[0].score, 0.9);
    }
}
