//! Deterministic synthetic world: an ego car driving a planar path, parked
//! and moving vehicles, a pinhole camera, corrupted SLAM yaw and corrupted
//! angle estimates. Everything downstream can be checked against its truth.
//!
//! World frame is planar `(x, z)`. The ego camera looks along
//! `(sin ψ, cos ψ)` and a vehicle of world yaw `θ` heads along
//! `(cos θ, −sin θ)`, so its camera-frame yaw is `θ − ψ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::box_fitter::VehicleSizePrior;
use crate::estimator::{CropDescriptor, SinTerm, SinusoidalEstimator};
use crate::geometry::{
    box3d_corners, local_from_global, project_box3d, ray_angle, Angle, Box2D, Box3D, BoxSize,
    CameraIntrinsics, EgoPose, MIN_PROJECTION_DEPTH,
};
use crate::robust_selfsup::{ObservationTrack, TrackFrame};

pub const SCENARIO_VERSION: u32 = 1;

const STREAM_TRAFFIC: u64 = 1;
const STREAM_SLAM: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_APPEARANCE: u64 = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera height above the ground plane, meters.
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 721.5377,
            fy: 721.5377,
            cx: 609.5593,
            cy: 172.854,
            width: 1242,
            height: 375,
            mount_height: 1.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EgoSegment {
    Straight { length: f64, speed: f64 },
    /// Constant-curvature arc turning by `turn_deg` over `length` meters.
    Arc { length: f64, speed: f64, turn_deg: f64 },
}

impl EgoSegment {
    fn length(&self) -> f64 {
        match *self {
            EgoSegment::Straight { length, .. } | EgoSegment::Arc { length, .. } => length,
        }
    }

    fn speed(&self) -> f64 {
        match *self {
            EgoSegment::Straight { speed, .. } | EgoSegment::Arc { speed, .. } => speed,
        }
    }

    fn turn(&self) -> f64 {
        match *self {
            EgoSegment::Straight { .. } => 0.0,
            EgoSegment::Arc { turn_deg, .. } => turn_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgoConfig {
    pub segments: Vec<EgoSegment>,
}

impl Default for EgoConfig {
    /// A 1.3 km drive: three laps of straight, left arc, straight, right arc.
    fn default() -> Self {
        let lap = [
            EgoSegment::Straight {
                length: 120.0,
                speed: 8.0,
            },
            EgoSegment::Arc {
                length: 40.0,
                speed: 6.0,
                turn_deg: 60.0,
            },
            EgoSegment::Straight {
                length: 120.0,
                speed: 8.0,
            },
            EgoSegment::Arc {
                length: 40.0,
                speed: 6.0,
                turn_deg: -75.0,
            },
            EgoSegment::Straight {
                length: 120.0,
                speed: 8.0,
            },
        ];
        Self {
            segments: lap.iter().cycle().take(3 * lap.len()).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    Stationary,
    Straight { speed: f64 },
    Turning { speed: f64, yaw_rate_deg: f64 },
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec::Stationary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub x: f64,
    pub z: f64,
    pub yaw_deg: f64,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub w: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub motion: MotionSpec,
}

/// Random vehicles placed along the ego path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub count: usize,
    pub moving_fraction: f64,
    pub turning_fraction: f64,
    /// Lateral distance from the ego path, meters.
    pub lateral_min: f64,
    pub lateral_max: f64,
    /// Placement extends this far past the end of the path.
    pub ahead: f64,
    pub min_spacing: f64,
    /// Share of parked vehicles with a uniformly random yaw instead of
    /// parallel to the road.
    pub random_yaw_fraction: f64,
    pub parked_yaw_jitter_deg: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub yaw_rate_min_deg: f64,
    pub yaw_rate_max_deg: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            count: 480,
            moving_fraction: 0.0,
            turning_fraction: 0.0,
            lateral_min: 3.0,
            lateral_max: 10.0,
            ahead: 40.0,
            min_spacing: 6.0,
            random_yaw_fraction: 0.5,
            parked_yaw_jitter_deg: 5.0,
            speed_min: 4.0,
            speed_max: 10.0,
            yaw_rate_min_deg: 20.0,
            yaw_rate_max_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Constant SLAM yaw offset. Drawn uniformly when absent.
    pub slam_bias_deg: Option<f64>,
    pub slam_noise_sigma_deg: f64,
    /// Slow linear yaw drift, degrees per second.
    pub slam_drift_deg_per_s: f64,
    pub distortion_amplitude_deg: f64,
    pub distortion_frequency: u32,
    pub distortion_phase_deg: f64,
    pub estimator_noise_sigma_deg: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude_deg: f64,
    pub detection_jitter_px: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            slam_bias_deg: None,
            slam_noise_sigma_deg: 0.2,
            slam_drift_deg_per_s: 0.0,
            distortion_amplitude_deg: 36.0,
            distortion_frequency: 9,
            distortion_phase_deg: 20.0,
            estimator_noise_sigma_deg: 8.0,
            outlier_rate: 0.05,
            outlier_magnitude_deg: 120.0,
            detection_jitter_px: 1.0,
        }
    }
}

impl NoiseConfig {
    /// Zero noise, zero distortion, zero bias.
    pub fn noiseless() -> Self {
        Self {
            slam_bias_deg: Some(0.0),
            slam_noise_sigma_deg: 0.0,
            slam_drift_deg_per_s: 0.0,
            distortion_amplitude_deg: 0.0,
            distortion_frequency: 1,
            distortion_phase_deg: 0.0,
            estimator_noise_sigma_deg: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude_deg: 0.0,
            detection_jitter_px: 0.0,
        }
    }

    pub fn distortion(&self) -> SinTerm {
        SinTerm {
            amplitude: self.distortion_amplitude_deg.to_radians(),
            frequency: self.distortion_frequency,
            phase: self.distortion_phase_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityConfig {
    /// Every box corner must be at least this far in front of the camera.
    pub min_depth: f64,
    pub max_depth: f64,
    pub min_height_px: f64,
    pub max_truncation: f64,
    pub max_occlusion: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            min_depth: 1.0,
            max_depth: 50.0,
            min_height_px: 18.0,
            max_truncation: 0.5,
            max_occlusion: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub frame_rate: f64,
    pub camera: CameraConfig,
    pub ego: EgoConfig,
    pub vehicles: Vec<VehicleSpec>,
    pub traffic: TrafficConfig,
    pub noise: NoiseConfig,
    pub visibility: VisibilityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: SCENARIO_VERSION,
            seed: 42,
            frame_rate: 10.0,
            camera: CameraConfig::default(),
            ego: EgoConfig::default(),
            vehicles: Vec::new(),
            traffic: TrafficConfig::default(),
            noise: NoiseConfig::default(),
            visibility: VisibilityConfig::default(),
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SimError> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

fn finite_all(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        let c = &self.camera;
        CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy).map_err(|e| invalid(format!("camera: {e}")))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(self.version == SCENARIO_VERSION, || {
            format!("unsupported scenario version {}", self.version)
        })?;
        check(self.frame_rate.is_finite() && self.frame_rate > 0.0, || {
            format!("frame_rate must be positive, got {}", self.frame_rate)
        })?;
        self.intrinsics()?;
        let c = &self.camera;
        check(c.width > 0 && c.height > 0, || "image size must be positive".into())?;
        check(c.mount_height.is_finite() && c.mount_height > 0.0, || {
            "camera mount_height must be positive".into()
        })?;

        check(!self.ego.segments.is_empty(), || "ego path has no segments".into())?;
        for (i, s) in self.ego.segments.iter().enumerate() {
            check(
                finite_all(&[s.length(), s.speed(), s.turn()]) && s.length() > 0.0 && s.speed() > 0.0,
                || format!("ego segment {i}: length and speed must be positive and finite"),
            )?;
        }

        for (i, v) in self.vehicles.iter().enumerate() {
            check(finite_all(&[v.x, v.z, v.yaw_deg]), || format!("vehicle {i}: non-finite pose"))?;
            for d in [v.h, v.w, v.l].into_iter().flatten() {
                check(d.is_finite() && d > 0.0, || format!("vehicle {i}: size must be positive"))?;
            }
            match v.motion {
                MotionSpec::Stationary => {}
                MotionSpec::Straight { speed } => {
                    check(speed.is_finite(), || format!("vehicle {i}: non-finite speed"))?
                }
                MotionSpec::Turning { speed, yaw_rate_deg } => check(finite_all(&[speed, yaw_rate_deg]), || {
                    format!("vehicle {i}: non-finite motion")
                })?,
            }
        }

        let t = &self.traffic;
        for (name, f) in [
            ("moving_fraction", t.moving_fraction),
            ("turning_fraction", t.turning_fraction),
            ("random_yaw_fraction", t.random_yaw_fraction),
        ] {
            check((0.0..=1.0).contains(&f), || format!("traffic.{name} must lie in [0, 1]"))?;
        }
        check(t.moving_fraction + t.turning_fraction <= 1.0 + 1e-12, || {
            "traffic moving_fraction + turning_fraction exceeds 1".into()
        })?;
        check(
            finite_all(&[t.lateral_min, t.lateral_max, t.ahead, t.min_spacing, t.parked_yaw_jitter_deg])
                && 0.0 <= t.lateral_min
                && t.lateral_min <= t.lateral_max
                && t.min_spacing >= 0.0
                && t.parked_yaw_jitter_deg >= 0.0,
            || "traffic placement ranges are invalid".into(),
        )?;
        check(
            finite_all(&[t.speed_min, t.speed_max, t.yaw_rate_min_deg, t.yaw_rate_max_deg])
                && t.speed_min <= t.speed_max
                && t.yaw_rate_min_deg <= t.yaw_rate_max_deg,
            || "traffic speed or yaw-rate range is invalid".into(),
        )?;

        let n = &self.noise;
        check(
            finite_all(&[
                n.slam_bias_deg.unwrap_or(0.0),
                n.slam_drift_deg_per_s,
                n.distortion_amplitude_deg,
                n.distortion_phase_deg,
            ]),
            || "noise values must be finite".into(),
        )?;
        for (name, v) in [
            ("slam_noise_sigma_deg", n.slam_noise_sigma_deg),
            ("estimator_noise_sigma_deg", n.estimator_noise_sigma_deg),
            ("outlier_magnitude_deg", n.outlier_magnitude_deg),
            ("detection_jitter_px", n.detection_jitter_px),
        ] {
            check(v.is_finite() && v >= 0.0, || format!("noise.{name} must be non-negative"))?;
        }
        check((0.0..=1.0).contains(&n.outlier_rate), || "noise.outlier_rate must lie in [0, 1]".into())?;

        let v = &self.visibility;
        check(
            finite_all(&[v.min_depth, v.max_depth, v.min_height_px, v.max_truncation, v.max_occlusion])
                && v.min_depth > 0.0
                && v.min_depth < v.max_depth,
            || "visibility depth range is invalid".into(),
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    Stationary,
    Straight,
    Turning,
}

impl MotionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MotionClass::Stationary => "stationary",
            MotionClass::Straight => "straight",
            MotionClass::Turning => "turning",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stationary" => Some(MotionClass::Stationary),
            "straight" => Some(MotionClass::Straight),
            "turning" => Some(MotionClass::Turning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTruth {
    pub id: u64,
    pub size: BoxSize,
    pub motion: MotionClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneFrame {
    pub frame: u32,
    pub timestamp: f64,
    pub ego: EgoPose,
    pub slam_yaw: Angle,
}

/// One emitted detection and everything true about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub track_id: u64,
    pub vehicle_id: u64,
    pub frame: u32,
    /// What a detector reports: jittered and clamped to the image.
    pub bbox: Box2D,
    /// Noise-free projection clamped to the image.
    pub clean_bbox: Box2D,
    /// Camera-frame ground truth.
    pub box3d: Box3D,
    pub truth_local: Angle,
    /// Fraction of the projected area outside the image.
    pub truncation: f64,
    /// 0 visible, 1 partly occluded, 2 largely occluded.
    pub occlusion: u8,
    /// Appearance error of this crop, radians.
    pub appearance_noise: f64,
    pub outlier: bool,
    pub feature: Angle,
    pub rough_local: Angle,
}

impl Observation {
    pub fn truth_global(&self) -> Angle {
        self.box3d.yaw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cam: CameraIntrinsics,
    pub image_width: u32,
    pub image_height: u32,
    pub frame_rate: f64,
    pub slam_bias: Angle,
    pub frames: Vec<SceneFrame>,
    pub vehicles: Vec<VehicleTruth>,
    /// Grouped by track, frames ascending within a track.
    pub observations: Vec<Observation>,
}

impl Scene {
    /// Observation tracks carrying crops, rough estimates and truth.
    pub fn tracks(&self) -> Vec<ObservationTrack> {
        let mut out: Vec<ObservationTrack> = Vec::new();
        for o in &self.observations {
            let f = &self.frames[o.frame as usize];
            let tf = TrackFrame {
                frame: o.frame,
                timestamp: f.timestamp,
                bbox: o.bbox,
                slam_yaw: f.slam_yaw,
                cam: self.cam,
                crop: CropDescriptor {
                    feature: o.feature,
                    track_id: Some(o.track_id),
                    frame: Some(o.frame),
                },
                rough_local: Some(o.rough_local),
                truth_local: Some(o.truth_local),
            };
            match out.last_mut() {
                Some(t) if t.track_id == o.track_id => t.frames.push(tf),
                _ => out.push(ObservationTrack {
                    track_id: o.track_id,
                    frames: vec![tf],
                }),
            }
        }
        out
    }

    pub fn vehicle(&self, id: u64) -> Option<&VehicleTruth> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Motion class of the vehicle behind each track, in track order.
    pub fn track_motion(&self) -> Vec<(u64, MotionClass)> {
        let mut out: Vec<(u64, MotionClass)> = Vec::new();
        for o in &self.observations {
            if out.last().map_or(true, |&(t, _)| t != o.track_id) {
                let m = self.vehicle(o.vehicle_id).map_or(MotionClass::Stationary, |v| v.motion);
                out.push((o.track_id, m));
            }
        }
        out
    }
}

/// Rough angle estimator matching the corruption model: reads the
/// appearance feature through the configured distortion.
pub fn initial_estimator(noise: &NoiseConfig) -> SinusoidalEstimator {
    if noise.distortion_amplitude_deg == 0.0 {
        return SinusoidalEstimator::identity();
    }
    SinusoidalEstimator {
        terms: vec![noise.distortion()],
    }
}

/// Rough local angles for every observation, in scene order: truth plus
/// distortion of the truth plus the crop's appearance noise, or truth plus
/// the outlier offset.
pub fn corrupt_estimates(scene: &Scene, noise: &NoiseConfig) -> Vec<Angle> {
    let d = noise.distortion();
    scene
        .observations
        .iter()
        .map(|o| rough_from_truth(o.truth_local, o.appearance_noise, o.outlier, &d))
        .collect()
}

fn rough_from_truth(truth: Angle, noise: f64, outlier: bool, d: &SinTerm) -> Angle {
    let t = truth.radians();
    if outlier {
        Angle::wrap(t + noise)
    } else {
        Angle::wrap(t + d.eval(t) + noise)
    }
}

struct PathPoint {
    x: f64,
    z: f64,
    yaw: f64,
}

/// Ego path evaluated by arc length; segment `k` starts at `starts[k]`.
struct EgoPath {
    segments: Vec<EgoSegment>,
    starts: Vec<PathPoint>,
    start_dist: Vec<f64>,
    start_time: Vec<f64>,
    total_length: f64,
    total_time: f64,
}

impl EgoPath {
    fn new(segments: &[EgoSegment]) -> Self {
        let mut starts = Vec::new();
        let mut start_dist = Vec::new();
        let mut start_time = Vec::new();
        let mut p = PathPoint {
            x: 0.0,
            z: 0.0,
            yaw: 0.0,
        };
        let (mut dist, mut time) = (0.0, 0.0);
        for s in segments {
            let end = advance(&p, s, s.length());
            starts.push(p);
            start_dist.push(dist);
            start_time.push(time);
            dist += s.length();
            time += s.length() / s.speed();
            p = end;
        }
        Self {
            segments: segments.to_vec(),
            starts,
            start_dist,
            start_time,
            total_length: dist,
            total_time: time,
        }
    }

    fn segment_at(&self, key: &[f64], value: f64) -> usize {
        key.iter().rposition(|&k| k <= value).unwrap_or(0)
    }

    fn at_distance(&self, s: f64) -> PathPoint {
        let s = s.clamp(0.0, self.total_length);
        let k = self.segment_at(&self.start_dist, s);
        advance(&self.starts[k], &self.segments[k], s - self.start_dist[k])
    }

    fn at_time(&self, t: f64) -> PathPoint {
        let t = t.clamp(0.0, self.total_time);
        let k = self.segment_at(&self.start_time, t);
        let seg = &self.segments[k];
        let along = ((t - self.start_time[k]) * seg.speed()).min(seg.length());
        advance(&self.starts[k], seg, along)
    }
}

fn advance(p: &PathPoint, seg: &EgoSegment, s: f64) -> PathPoint {
    let kappa = seg.turn() / seg.length();
    if kappa == 0.0 {
        let (sn, cs) = p.yaw.sin_cos();
        return PathPoint {
            x: p.x + s * sn,
            z: p.z + s * cs,
            yaw: p.yaw,
        };
    }
    let yaw = p.yaw + kappa * s;
    PathPoint {
        x: p.x + (p.yaw.cos() - yaw.cos()) / kappa,
        z: p.z + (yaw.sin() - p.yaw.sin()) / kappa,
        yaw,
    }
}

#[derive(Debug, Clone, Copy)]
struct Vehicle {
    id: u64,
    x: f64,
    z: f64,
    yaw: f64,
    size: BoxSize,
    motion: MotionSpec,
}

impl Vehicle {
    /// World position and yaw after `t` seconds.
    fn state(&self, t: f64) -> (f64, f64, f64) {
        match self.motion {
            MotionSpec::Stationary => (self.x, self.z, self.yaw),
            MotionSpec::Straight { speed } => (
                self.x + speed * t * self.yaw.cos(),
                self.z - speed * t * self.yaw.sin(),
                self.yaw,
            ),
            MotionSpec::Turning { speed, yaw_rate_deg } => {
                let w = yaw_rate_deg.to_radians();
                if w == 0.0 {
                    return Vehicle {
                        motion: MotionSpec::Straight { speed },
                        ..*self
                    }
                    .state(t);
                }
                let yaw = self.yaw + w * t;
                (
                    self.x + speed / w * (yaw.sin() - self.yaw.sin()),
                    self.z + speed / w * (yaw.cos() - self.yaw.cos()),
                    yaw,
                )
            }
        }
    }

    fn class(&self) -> MotionClass {
        match self.motion {
            MotionSpec::Stationary => MotionClass::Stationary,
            MotionSpec::Straight { .. } => MotionClass::Straight,
            MotionSpec::Turning { .. } => MotionClass::Turning,
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.gen::<f64>()
}

fn place_traffic(cfg: &ScenarioConfig, path: &EgoPath, first_id: u64) -> Vec<Vehicle> {
    let t = &cfg.traffic;
    let prior = VehicleSizePrior::default().0;
    let mut r = rng(cfg.seed, STREAM_TRAFFIC);
    let mut out: Vec<Vehicle> = Vec::with_capacity(t.count);
    let n_moving = (t.count as f64 * t.moving_fraction).round() as usize;
    let n_turning = ((t.count as f64 * t.turning_fraction).round() as usize).min(t.count - n_moving.min(t.count));
    for i in 0..t.count {
        let mut placed = None;
        for _ in 0..100 {
            let s = uniform(&mut r, 0.0, path.total_length + t.ahead);
            let p = if s <= path.total_length {
                path.at_distance(s)
            } else {
                let end = path.at_distance(path.total_length);
                let extra = s - path.total_length;
                PathPoint {
                    x: end.x + extra * end.yaw.sin(),
                    z: end.z + extra * end.yaw.cos(),
                    yaw: end.yaw,
                }
            };
            let side = if r.gen::<bool>() { 1.0 } else { -1.0 };
            let lateral = side * uniform(&mut r, t.lateral_min, t.lateral_max);
            // the camera's +X axis in world coordinates
            let (x, z) = (p.x + lateral * p.yaw.cos(), p.z - lateral * p.yaw.sin());
            let far = out
                .iter()
                .all(|v| (v.x - x).hypot(v.z - z) >= t.min_spacing);
            let clear = (0..=40).all(|k| {
                let q = path.at_distance(path.total_length * k as f64 / 40.0);
                (q.x - x).hypot(q.z - z) >= t.lateral_min.min(2.5)
            });
            if far && clear {
                placed = Some((x, z, p.yaw));
                break;
            }
        }
        let Some((x, z, road)) = placed else { continue };
        // a vehicle aligned with the road has world yaw ψ ± π/2
        let along = road - std::f64::consts::FRAC_PI_2;
        let flip = if r.gen::<bool>() { std::f64::consts::PI } else { 0.0 };
        let random_yaw = r.gen::<f64>() < t.random_yaw_fraction;
        let yaw_uniform = uniform(&mut r, -std::f64::consts::PI, std::f64::consts::PI);
        let jitter = uniform(&mut r, -1.0, 1.0) * t.parked_yaw_jitter_deg.to_radians();
        let size = BoxSize {
            h: prior.h * uniform(&mut r, 0.92, 1.08),
            w: prior.w * uniform(&mut r, 0.92, 1.08),
            l: prior.l * uniform(&mut r, 0.88, 1.12),
        };
        let speed = uniform(&mut r, t.speed_min, t.speed_max);
        let rate_sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
        let rate = rate_sign * uniform(&mut r, t.yaw_rate_min_deg, t.yaw_rate_max_deg);

        // parked vehicles come first so that adding movers keeps them intact
        let n_parked = t.count - n_moving - n_turning;
        let (yaw, motion) = if i >= n_parked + n_turning {
            (along + flip, MotionSpec::Straight { speed })
        } else if i >= n_parked {
            (
                along + flip,
                MotionSpec::Turning {
                    speed,
                    yaw_rate_deg: rate,
                },
            )
        } else if random_yaw {
            (yaw_uniform, MotionSpec::Stationary)
        } else {
            (along + flip + jitter, MotionSpec::Stationary)
        };
        out.push(Vehicle {
            id: first_id + i as u64,
            x,
            z,
            yaw,
            size,
            motion,
        });
    }
    out
}

struct Candidate {
    vehicle: usize,
    box3d: Box3D,
    clean: Box2D,
    truncation: f64,
    depth: f64,
}

fn clamp_to_image(b: &Box2D, w: f64, h: f64) -> Option<Box2D> {
    Box2D::new(
        b.u_min.clamp(0.0, w),
        b.v_min.clamp(0.0, h),
        b.u_max.clamp(0.0, w),
        b.v_max.clamp(0.0, h),
    )
    .ok()
}

fn occlusion_level(fraction: f64) -> u8 {
    if fraction < 0.15 {
        0
    } else if fraction < 0.5 {
        1
    } else {
        2
    }
}

/// Builds the full scene for `cfg`.
pub fn generate_scene(cfg: &ScenarioConfig) -> Result<Scene, SimError> {
    cfg.validate()?;
    let cam = cfg.intrinsics()?;
    let (img_w, img_h) = (cfg.camera.width as f64, cfg.camera.height as f64);
    let path = EgoPath::new(&cfg.ego.segments);
    let n_frames = (path.total_time * cfg.frame_rate).floor() as usize + 1;
    let noise = &cfg.noise;

    let mut slam_rng = rng(cfg.seed, STREAM_SLAM);
    let slam_bias = match noise.slam_bias_deg {
        Some(b) => Angle::wrap(b.to_radians()),
        None => Angle::wrap(uniform(&mut slam_rng, -std::f64::consts::PI, std::f64::consts::PI)),
    };
    let slam_noise = Normal::new(0.0, noise.slam_noise_sigma_deg.to_radians())
        .map_err(|e| invalid(format!("slam noise: {e}")))?;
    let frames: Vec<SceneFrame> = (0..n_frames)
        .map(|k| {
            let t = k as f64 / cfg.frame_rate;
            let p = path.at_time(t);
            let yaw = Angle::wrap(p.yaw);
            let n = slam_noise.sample(&mut slam_rng);
            let drift = noise.slam_drift_deg_per_s.to_radians() * t;
            SceneFrame {
                frame: k as u32,
                timestamp: t,
                ego: EgoPose { x: p.x, z: p.z, yaw },
                slam_yaw: Angle::wrap(yaw.radians() + slam_bias.radians() + drift + n),
            }
        })
        .collect();

    let prior = VehicleSizePrior::default().0;
    let mut vehicles: Vec<Vehicle> = Vec::new();
    for (i, v) in cfg.vehicles.iter().enumerate() {
        vehicles.push(Vehicle {
            id: i as u64,
            x: v.x,
            z: v.z,
            yaw: v.yaw_deg.to_radians(),
            size: BoxSize {
                h: v.h.unwrap_or(prior.h),
                w: v.w.unwrap_or(prior.w),
                l: v.l.unwrap_or(prior.l),
            },
            motion: v.motion,
        });
    }
    vehicles.extend(place_traffic(cfg, &path, cfg.vehicles.len() as u64));

    let jitter = Normal::new(0.0, noise.detection_jitter_px).map_err(|e| invalid(format!("jitter: {e}")))?;
    let appearance = Normal::new(0.0, noise.estimator_noise_sigma_deg.to_radians())
        .map_err(|e| invalid(format!("estimator noise: {e}")))?;
    let mut jitter_rng = rng(cfg.seed, STREAM_JITTER);
    let mut app_rng = rng(cfg.seed, STREAM_APPEARANCE);
    let distortion = noise.distortion();
    let vis = &cfg.visibility;

    // (vehicle, frame) -> observation, in frame-major order
    let mut raw_obs: Vec<(usize, Observation)> = Vec::new();
    for f in &frames {
        let mut cands: Vec<Candidate> = Vec::new();
        for (vi, v) in vehicles.iter().enumerate() {
            let (x, z, yaw) = v.state(f.timestamp);
            let [cx, cz] = f.ego.to_camera(x, z);
            if cz > vis.max_depth + v.size.l || cz < 0.0 {
                continue;
            }
            let box3d = Box3D {
                center: [cx, cfg.camera.mount_height - 0.5 * v.size.h, cz],
                size: v.size,
                yaw: Angle::wrap(yaw - f.ego.yaw.radians()),
            };
            let depth = cx.hypot(cz);
            if depth > vis.max_depth {
                continue;
            }
            let min_z = box3d_corners(&box3d).iter().map(|c| c[2]).fold(f64::INFINITY, f64::min);
            if min_z < vis.min_depth.max(MIN_PROJECTION_DEPTH) {
                continue;
            }
            let Ok(raw) = project_box3d(&box3d, &cam) else { continue };
            let Some(clean) = clamp_to_image(&raw, img_w, img_h) else { continue };
            let truncation = (1.0 - clean.area() / raw.area()).clamp(0.0, 1.0);
            if truncation > vis.max_truncation || clean.height() < vis.min_height_px {
                continue;
            }
            cands.push(Candidate {
                vehicle: vi,
                box3d,
                clean,
                truncation,
                depth,
            });
        }
        cands.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.vehicle.cmp(&b.vehicle)));
        for (i, c) in cands.iter().enumerate() {
            let covered: f64 = cands[..i]
                .iter()
                .filter_map(|n| c.clean.intersect(&n.clean))
                .map(|b| b.area())
                .sum();
            let occluded = (covered / c.clean.area()).min(1.0);
            if occluded > vis.max_occlusion {
                continue;
            }
            let noisy = Box2D::new(
                c.clean.u_min + jitter.sample(&mut jitter_rng),
                c.clean.v_min + jitter.sample(&mut jitter_rng),
                c.clean.u_max + jitter.sample(&mut jitter_rng),
                c.clean.v_max + jitter.sample(&mut jitter_rng),
            )
            .ok()
            .and_then(|b| clamp_to_image(&b, img_w, img_h))
            .filter(|b| b.width() >= 1.0 && b.height() >= 1.0)
            .unwrap_or(c.clean);

            let truth_local = local_from_global(c.box3d.yaw, ray_angle(&c.clean, &cam));
            let u: f64 = app_rng.gen();
            let sign = if app_rng.gen::<bool>() { 1.0 } else { -1.0 };
            let frac = uniform(&mut app_rng, 0.5, 1.0);
            let gauss = appearance.sample(&mut app_rng);
            let outlier = u < noise.outlier_rate;
            let appearance_noise = if outlier {
                sign * frac * noise.outlier_magnitude_deg.to_radians()
            } else {
                gauss
            };
            raw_obs.push((
                c.vehicle,
                Observation {
                    track_id: 0,
                    vehicle_id: vehicles[c.vehicle].id,
                    frame: f.frame,
                    bbox: noisy,
                    clean_bbox: c.clean,
                    box3d: c.box3d,
                    truth_local,
                    truncation: c.truncation,
                    occlusion: occlusion_level(occluded),
                    appearance_noise,
                    outlier,
                    feature: Angle::wrap(truth_local.radians() + appearance_noise),
                    rough_local: rough_from_truth(truth_local, appearance_noise, outlier, &distortion),
                },
            ));
        }
    }

    // Contiguous visibility runs become tracks, numbered by (vehicle, start).
    raw_obs.sort_by_key(|(vi, o)| (*vi, o.frame));
    let mut observations = Vec::with_capacity(raw_obs.len());
    let mut next_track = 0u64;
    let mut prev: Option<(usize, u32)> = None;
    for (vi, mut o) in raw_obs {
        let continues = matches!(prev, Some((pv, pf)) if pv == vi && pf + 1 == o.frame);
        if !continues {
            next_track += 1;
        }
        o.track_id = next_track;
        prev = Some((vi, o.frame));
        observations.push(o);
    }

    Ok(Scene {
        cam,
        image_width: cfg.camera.width,
        image_height: cfg.camera.height,
        frame_rate: cfg.frame_rate,
        slam_bias,
        frames,
        vehicles: vehicles
            .iter()
            .map(|v| VehicleTruth {
                id: v.id,
                size: v.size,
                motion: v.class(),
            })
            .collect(),
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::AngleEstimator;
    use crate::robust_selfsup::slam_global_delta;

    fn quiet(cfg: &mut ScenarioConfig) {
        cfg.noise = NoiseConfig::noiseless();
    }

    fn abeam() -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            ego: EgoConfig {
                segments: vec![EgoSegment::Straight {
                    length: 60.0,
                    speed: 10.0,
                }],
            },
            vehicles: vec![VehicleSpec {
                x: 6.0,
                z: 30.0,
                yaw_deg: 90.0,
                h: None,
                w: None,
                l: None,
                motion: MotionSpec::Stationary,
            }],
            traffic: TrafficConfig {
                count: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        quiet(&mut cfg);
        cfg
    }

    #[test]
    fn parked_car_local_angle_sweeps_monotonically() {
        let scene = generate_scene(&abeam()).unwrap();
        let obs: Vec<&Observation> = scene.observations.iter().collect();
        assert!(obs.len() > 10);
        assert!(obs.iter().all(|o| o.track_id == obs[0].track_id));
        let rays: Vec<f64> = obs.iter().map(|o| ray_angle(&o.clean_bbox, &scene.cam).radians()).collect();
        let locals: Vec<f64> = obs.iter().map(|o| o.truth_local.radians()).collect();
        // driving past: the ray angle grows and the local angle falls
        assert!(rays.windows(2).all(|w| w[1] > w[0]));
        assert!(locals.windows(2).all(|w| w[1] < w[0]));
        for o in &obs {
            assert!((o.truth_global().radians() - 90f64.to_radians()).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_slam_is_truth_plus_bias() {
        let mut cfg = abeam();
        cfg.noise.slam_bias_deg = Some(37.0);
        cfg.ego.segments.push(EgoSegment::Arc {
            length: 30.0,
            speed: 5.0,
            turn_deg: 80.0,
        });
        let scene = generate_scene(&cfg).unwrap();
        for f in &scene.frames {
            let expect = Angle::wrap(f.ego.yaw.radians() + 37f64.to_radians());
            assert!(f.slam_yaw.distance(expect) < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = ScenarioConfig {
            seed: 7,
            ..ScenarioConfig::default()
        };
        assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn identity_corruption() {
        let mut cfg = ScenarioConfig::default();
        quiet(&mut cfg);
        let scene = generate_scene(&cfg).unwrap();
        let est = corrupt_estimates(&scene, &cfg.noise);
        assert!(!est.is_empty());
        for (o, e) in scene.observations.iter().zip(&est) {
            assert_eq!(*e, o.truth_local);
            assert_eq!(o.feature, o.truth_local);
        }
    }

    #[test]
    fn all_outliers_are_far_off() {
        let mut cfg = ScenarioConfig::default();
        cfg.noise.outlier_rate = 1.0;
        cfg.noise.outlier_magnitude_deg = 90.0;
        let scene = generate_scene(&cfg).unwrap();
        for (o, e) in scene.observations.iter().zip(corrupt_estimates(&scene, &cfg.noise)) {
            let off = e.distance(o.truth_local).to_degrees();
            assert!((45.0 - 1e-9..=90.0 + 1e-9).contains(&off), "{off}");
        }
    }

    #[test]
    fn outlier_fraction_matches_rate() {
        let cfg = ScenarioConfig::default();
        let scene = generate_scene(&cfg).unwrap();
        let n = scene.observations.len();
        assert!(n >= 10_000, "only {n} draws");
        let hits = scene.observations.iter().filter(|o| o.outlier).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - cfg.noise.outlier_rate).abs() < 0.03, "{frac}");
    }

    #[test]
    fn stored_rough_estimates_follow_the_model() {
        let cfg = ScenarioConfig::default();
        let scene = generate_scene(&cfg).unwrap();
        let again = corrupt_estimates(&scene, &cfg.noise);
        for (o, r) in scene.observations.iter().zip(again) {
            assert_eq!(o.rough_local, r);
        }
    }

    #[test]
    fn initial_estimator_tracks_the_rough_model() {
        let cfg = ScenarioConfig::default();
        let scene = generate_scene(&cfg).unwrap();
        let m0 = initial_estimator(&cfg.noise);
        let tracks = scene.tracks();
        let errs: Vec<f64> = tracks
            .iter()
            .flat_map(|t| t.frames.iter())
            .map(|f| m0.estimate(&f.crop).unwrap().distance(f.truth_local.unwrap()).to_degrees())
            .collect();
        let mut e = errs.clone();
        e.sort_by(f64::total_cmp);
        let med = e[e.len() / 2];
        assert!((20.0..=30.0).contains(&med), "M0 median error {med}");
    }

    #[test]
    fn stationary_global_deltas_follow_ego_yaw() {
        let mut cfg = ScenarioConfig::default();
        quiet(&mut cfg);
        cfg.noise.slam_bias_deg = Some(-123.0);
        let scene = generate_scene(&cfg).unwrap();
        let mut checked = 0;
        for t in scene.tracks() {
            let obs: Vec<&Observation> = scene.observations.iter().filter(|o| o.track_id == t.track_id).collect();
            for a in &obs {
                for b in &obs {
                    let slam = slam_global_delta(scene.frames[a.frame as usize].slam_yaw, scene.frames[b.frame as usize].slam_yaw);
                    let truth = a.truth_global() - b.truth_global();
                    // s = −θ_slam: Δs equals Δ(true global angle)
                    assert!(((-slam) - truth).radians().abs() < 1e-9);
                    checked += 1;
                }
            }
            if checked > 20_000 {
                break;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn straight_movers_keep_their_world_heading() {
        let mut cfg = ScenarioConfig::default();
        quiet(&mut cfg);
        cfg.traffic.moving_fraction = 0.5;
        let scene = generate_scene(&cfg).unwrap();
        let movers: Vec<u64> = scene
            .vehicles
            .iter()
            .filter(|v| v.motion == MotionClass::Straight)
            .map(|v| v.id)
            .collect();
        let mut seen = 0;
        for o in scene.observations.iter().filter(|o| movers.contains(&o.vehicle_id)) {
            let f = &scene.frames[o.frame as usize];
            let world = o.truth_global() + f.ego.yaw;
            let first = scene
                .observations
                .iter()
                .find(|p| p.vehicle_id == o.vehicle_id)
                .map(|p| p.truth_global() + scene.frames[p.frame as usize].ego.yaw)
                .unwrap();
            assert!(world.distance(first) < 1e-9);
            seen += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn zero_slam_noise_differences_are_exact_for_any_bias() {
        for bias in [0.0, 90.0, -179.0] {
            let mut cfg = abeam();
            cfg.noise.slam_bias_deg = Some(bias);
            cfg.ego.segments.push(EgoSegment::Arc {
                length: 20.0,
                speed: 4.0,
                turn_deg: -40.0,
            });
            let scene = generate_scene(&cfg).unwrap();
            for w in scene.frames.windows(2) {
                let d_slam = w[1].slam_yaw - w[0].slam_yaw;
                let d_true = w[1].ego.yaw - w[0].ego.yaw;
                assert!(d_slam.distance(d_true) < 1e-12);
            }
        }
    }

    #[test]
    fn emitted_detections_are_inside_the_image_and_in_front() {
        let scene = generate_scene(&ScenarioConfig::default()).unwrap();
        let (w, h) = (scene.image_width as f64, scene.image_height as f64);
        for o in &scene.observations {
            for b in [o.bbox, o.clean_bbox] {
                assert!(b.u_min >= 0.0 && b.v_min >= 0.0 && b.u_max <= w && b.v_max <= h);
            }
            assert!(box3d_corners(&o.box3d).iter().all(|c| c[2] > 0.0));
            assert!((0.0..=0.5).contains(&o.truncation));
        }
    }

    #[test]
    fn tracks_are_contiguous_and_ordered() {
        let scene = generate_scene(&ScenarioConfig::default()).unwrap();
        let tracks = scene.tracks();
        assert!(tracks.len() > 50);
        for t in &tracks {
            assert!(t.frames.windows(2).all(|w| w[1].frame == w[0].frame + 1));
            assert!(ObservationTrack::new(t.track_id, t.frames.clone()).is_ok());
        }
        let ids: Vec<u64> = tracks.iter().map(|t| t.track_id).collect();
        assert!(ids.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = ScenarioConfig::default();
        cfg.vehicles.push(VehicleSpec {
            x: 1.0,
            z: 2.0,
            yaw_deg: 3.0,
            h: Some(1.4),
            w: None,
            l: None,
            motion: MotionSpec::Turning {
                speed: 5.0,
                yaw_rate_deg: 20.0,
            },
        });
        cfg.noise.slam_bias_deg = Some(12.5);
        let text = cfg.to_toml();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ScenarioConfig::from_toml("frame_rate = 0.0").is_err());
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
        assert!(ScenarioConfig::from_toml("[ego]\nsegments = []").is_err());
        assert!(ScenarioConfig::from_toml(
            "[[ego.segments]]\nkind = \"straight\"\nlength = -1.0\nspeed = 3.0"
        )
        .is_err());
        assert!(ScenarioConfig::from_toml("[noise]\noutlier_rate = 1.5").is_err());
        assert!(ScenarioConfig::from_toml("version = 9").is_err());
    }

    #[test]
    fn empty_traffic_gives_empty_scene() {
        let cfg = ScenarioConfig {
            traffic: TrafficConfig {
                count: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        assert!(scene.observations.is_empty() && scene.tracks().is_empty());
        assert!(!scene.frames.is_empty());
    }
}
