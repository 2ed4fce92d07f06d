//! Plain-text file formats.
//!
//! All files are whitespace-delimited with `#` comments. Floats are written
//! with Rust's shortest round-trip representation, so reading back yields
//! the identical `f64`. Angles are radians.
//!
//! | file | one line per |
//! |---|---|
//! | `tracks.txt` | detection: `track_id frame timestamp u_min v_min u_max v_max slam_yaw rough_local crop_feature` (`-` for absent optional fields) |
//! | `tracks_truth.txt` | detection: `track_id frame truth_local truth_global vehicle_id motion` |
//! | `calib.txt` | `P2:` followed by the 12 entries of the 3×4 projection matrix |
//! | `poses.txt` | frame: 3×4 row-major camera-to-world transform (KITTI odometry) |
//! | `labels/NNNNNN.txt` | object: KITTI label line, optional trailing score |
//! | `detections.txt` | detection: `frame u_min v_min u_max v_max score crop_feature` |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::box_fitter::Detection;
use crate::estimator::CropDescriptor;
use crate::geometry::{Angle, Box2D, Box3D, BoxSize, CameraIntrinsics, EgoPose};
use crate::robust_selfsup::{ObservationTrack, TrackFrame};
use crate::simulator::{MotionClass, Observation, Scene, SceneFrame, VehicleTruth};

pub const TRACKS_FORMAT_VERSION: u32 = 1;
pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context} line {line}: {msg}")]
    Parse {
        context: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub fn read_file(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

struct LineCtx<'a> {
    context: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl Into<String>) -> FormatError {
        FormatError::Parse {
            context: self.context.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T, FormatError> {
        s.parse().map_err(|_| self.err(format!("invalid {what} '{s}'")))
    }

    fn float(&self, s: &str, what: &str) -> Result<f64, FormatError> {
        let v: f64 = self.num(s, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("non-finite {what}")))
        }
    }

    fn angle(&self, s: &str, what: &str) -> Result<Angle, FormatError> {
        Angle::new(self.float(s, what)?).map_err(|e| self.err(format!("{what}: {e}")))
    }

    fn opt_angle(&self, s: &str, what: &str) -> Result<Option<Angle>, FormatError> {
        if s == "-" {
            Ok(None)
        } else {
            self.angle(s, what).map(Some)
        }
    }

    fn bbox(&self, f: &[&str]) -> Result<Box2D, FormatError> {
        Box2D::new(
            self.float(f[0], "u_min")?,
            self.float(f[1], "v_min")?,
            self.float(f[2], "u_max")?,
            self.float(f[3], "v_max")?,
        )
        .map_err(|e| self.err(e.to_string()))
    }

    fn expect_fields(&self, f: &[&str], counts: &[usize]) -> Result<(), FormatError> {
        if counts.contains(&f.len()) {
            Ok(())
        } else {
            Err(self.err(format!("expected {counts:?} fields, got {}", f.len())))
        }
    }
}

fn opt(a: Option<Angle>) -> String {
    a.map_or_else(|| "-".to_string(), |a| a.radians().to_string())
}

// ---- tracks -------------------------------------------------------------

/// One line of a tracks file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub track_id: u64,
    pub frame: u32,
    pub timestamp: f64,
    pub bbox: Box2D,
    pub slam_yaw: Angle,
    pub rough_local: Option<Angle>,
    pub crop_feature: Option<Angle>,
}

pub fn write_tracks(tracks: &[ObservationTrack]) -> String {
    let mut out = format!(
        "# orient-tracks {TRACKS_FORMAT_VERSION}\n# track_id frame timestamp u_min v_min u_max v_max slam_yaw rough_local crop_feature\n"
    );
    for t in tracks {
        for f in &t.frames {
            let b = &f.bbox;
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {}",
                t.track_id,
                f.frame,
                f.timestamp,
                b.u_min,
                b.v_min,
                b.u_max,
                b.v_max,
                f.slam_yaw.radians(),
                opt(f.rough_local),
                f.crop.feature.radians()
            );
        }
    }
    out
}

pub fn parse_track_records(text: &str) -> Result<Vec<TrackRecord>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        let c = LineCtx {
            context: "tracks",
            line,
        };
        c.expect_fields(&f, &[8, 9, 10])?;
        out.push(TrackRecord {
            track_id: c.num(f[0], "track_id")?,
            frame: c.num(f[1], "frame")?,
            timestamp: c.float(f[2], "timestamp")?,
            bbox: c.bbox(&f[3..7])?,
            slam_yaw: c.angle(f[7], "slam_yaw")?,
            rough_local: match f.get(8) {
                Some(s) => c.opt_angle(s, "rough_local")?,
                None => None,
            },
            crop_feature: match f.get(9) {
                Some(s) => c.opt_angle(s, "crop_feature")?,
                None => None,
            },
        });
    }
    Ok(out)
}

/// Groups records into tracks. Lines of one track must be contiguous and
/// ordered by frame. The crop feature falls back to the rough estimate.
pub fn read_tracks(text: &str, cam: &CameraIntrinsics) -> Result<Vec<ObservationTrack>, FormatError> {
    let mut tracks: Vec<ObservationTrack> = Vec::new();
    for r in parse_track_records(text)? {
        let feature = r.crop_feature.or(r.rough_local).ok_or_else(|| {
            FormatError::Invalid(format!(
                "track {} frame {}: needs a rough_local or crop_feature value",
                r.track_id, r.frame
            ))
        })?;
        let frame = TrackFrame {
            frame: r.frame,
            timestamp: r.timestamp,
            bbox: r.bbox,
            slam_yaw: r.slam_yaw,
            cam: *cam,
            crop: CropDescriptor {
                feature,
                track_id: Some(r.track_id),
                frame: Some(r.frame),
            },
            rough_local: r.rough_local,
            truth_local: None,
        };
        match tracks.last_mut() {
            Some(t) if t.track_id == r.track_id => {
                let last = t.frames.last().map(|f| (f.frame, f.timestamp));
                if let Some((pf, pt)) = last {
                    if r.frame <= pf || r.timestamp <= pt {
                        return Err(FormatError::Invalid(format!(
                            "track {}: frames must increase (frame {} after {})",
                            r.track_id, r.frame, pf
                        )));
                    }
                }
                t.frames.push(frame);
            }
            _ => {
                if tracks.iter().any(|t| t.track_id == r.track_id) {
                    return Err(FormatError::Invalid(format!(
                        "track {} appears in more than one block",
                        r.track_id
                    )));
                }
                tracks.push(ObservationTrack {
                    track_id: r.track_id,
                    frames: vec![frame],
                });
            }
        }
    }
    Ok(tracks)
}

/// Ground truth attached to a tracks file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub track_id: u64,
    pub frame: u32,
    pub truth_local: Angle,
    pub truth_global: Angle,
    pub vehicle_id: u64,
    pub motion: MotionClass,
}

pub fn write_tracks_truth(records: &[TruthRecord]) -> String {
    let mut out = String::from("# track_id frame truth_local truth_global vehicle_id motion\n");
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            r.track_id,
            r.frame,
            r.truth_local.radians(),
            r.truth_global.radians(),
            r.vehicle_id,
            r.motion.as_str()
        );
    }
    out
}

pub fn parse_tracks_truth(text: &str) -> Result<Vec<TruthRecord>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        let c = LineCtx {
            context: "tracks truth",
            line,
        };
        c.expect_fields(&f, &[6])?;
        out.push(TruthRecord {
            track_id: c.num(f[0], "track_id")?,
            frame: c.num(f[1], "frame")?,
            truth_local: c.angle(f[2], "truth_local")?,
            truth_global: c.angle(f[3], "truth_global")?,
            vehicle_id: c.num(f[4], "vehicle_id")?,
            motion: MotionClass::parse(f[5]).ok_or_else(|| c.err(format!("unknown motion '{}'", f[5])))?,
        });
    }
    Ok(out)
}

/// Sets `truth_local` on every frame that has a truth record.
pub fn attach_truth(tracks: &mut [ObservationTrack], truth: &[TruthRecord]) {
    let mut map = std::collections::HashMap::new();
    for r in truth {
        map.insert((r.track_id, r.frame), r.truth_local);
    }
    for t in tracks {
        for f in &mut t.frames {
            if let Some(&a) = map.get(&(t.track_id, f.frame)) {
                f.truth_local = Some(a);
            }
        }
    }
}

// ---- calibration and poses ---------------------------------------------

pub fn write_calib(cam: &CameraIntrinsics) -> String {
    format!(
        "P2: {} 0 {} 0 0 {} {} 0 0 0 1 0\n",
        cam.fx, cam.cx, cam.fy, cam.cy
    )
}

/// Intrinsics from the `P2:` line of a KITTI calibration file.
pub fn parse_calib(text: &str) -> Result<CameraIntrinsics, FormatError> {
    for (i, l) in text.lines().enumerate() {
        let mut it = l.split_whitespace();
        if it.next() != Some("P2:") {
            continue;
        }
        let c = LineCtx {
            context: "calib",
            line: i + 1,
        };
        let f: Vec<&str> = it.collect();
        c.expect_fields(&f, &[12])?;
        let p: Vec<f64> = f
            .iter()
            .map(|s| c.float(s, "matrix entry"))
            .collect::<Result<_, _>>()?;
        return CameraIntrinsics::new(p[0], p[5], p[2], p[6]).map_err(|e| c.err(e.to_string()));
    }
    Err(FormatError::Invalid("calib: no 'P2:' line".into()))
}

/// Camera-to-world transforms: rotation about the vertical axis by the yaw
/// and translation `(x, 0, z)`.
pub fn write_poses(poses: &[EgoPose]) -> String {
    let mut out = String::new();
    for p in poses {
        let (s, c) = p.yaw.radians().sin_cos();
        let _ = writeln!(out, "{c} 0 {s} {} 0 1 0 0 {} 0 {c} {}", p.x, -s, p.z);
    }
    out
}

/// Reads KITTI odometry poses; yaw is `atan2(r02, r22)`.
pub fn parse_poses(text: &str) -> Result<Vec<EgoPose>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        let c = LineCtx {
            context: "poses",
            line,
        };
        c.expect_fields(&f, &[12])?;
        let m: Vec<f64> = f
            .iter()
            .map(|s| c.float(s, "matrix entry"))
            .collect::<Result<_, _>>()?;
        let r = |i: usize, j: usize| m[4 * i + j];
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r(i, k) * r(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(c.err("rotation is not orthonormal"));
                }
            }
        }
        out.push(EgoPose {
            x: m[3],
            z: m[11],
            yaw: Angle::wrap(r(0, 2).atan2(r(2, 2))),
        });
    }
    Ok(out)
}

// ---- KITTI labels --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: u8,
    pub alpha: Angle,
    pub bbox: Box2D,
    pub size: BoxSize,
    /// Bottom-center of the box in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: Angle,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn from_box3d(
        kind: &str,
        b: &Box3D,
        bbox: Box2D,
        alpha: Angle,
        truncated: f64,
        occluded: u8,
        score: Option<f64>,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            truncated,
            occluded,
            alpha,
            bbox,
            size: b.size,
            location: [b.center[0], b.center[1] + 0.5 * b.size.h, b.center[2]],
            rotation_y: b.yaw,
            score,
        }
    }

    /// The label as a geometric-center box.
    pub fn box3d(&self) -> Box3D {
        Box3D {
            center: [
                self.location[0],
                self.location[1] - 0.5 * self.size.h,
                self.location[2],
            ],
            size: self.size,
            yaw: self.rotation_y,
        }
    }

    pub fn to_line(&self) -> String {
        let b = &self.bbox;
        let mut s = format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.kind,
            self.truncated,
            self.occluded,
            self.alpha.radians(),
            b.u_min,
            b.v_min,
            b.u_max,
            b.v_max,
            self.size.h,
            self.size.w,
            self.size.l,
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y.radians()
        );
        if let Some(sc) = self.score {
            let _ = write!(s, " {sc}");
        }
        s
    }
}

pub fn write_labels(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| l.to_line() + "\n").collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        let c = LineCtx {
            context: "label",
            line,
        };
        c.expect_fields(&f, &[15, 16])?;
        let size = BoxSize::new(
            c.float(f[8], "h")?,
            c.float(f[9], "w")?,
            c.float(f[10], "l")?,
        );
        // KITTI marks DontCare regions with non-positive sizes
        let size = match size {
            Ok(s) => s,
            Err(_) if f[0] == "DontCare" => BoxSize {
                h: 1.0,
                w: 1.0,
                l: 1.0,
            },
            Err(e) => return Err(c.err(e.to_string())),
        };
        out.push(KittiLabel {
            kind: f[0].to_string(),
            truncated: c.float(f[1], "truncated")?,
            occluded: c.float(f[2], "occluded").map(|v| v.max(0.0) as u8)?,
            alpha: c.angle(f[3], "alpha")?,
            bbox: c.bbox(&f[4..8])?,
            size,
            location: [
                c.float(f[11], "x")?,
                c.float(f[12], "y")?,
                c.float(f[13], "z")?,
            ],
            rotation_y: c.angle(f[14], "rotation_y")?,
            score: match f.get(15) {
                Some(s) => Some(c.float(s, "score")?),
                None => None,
            },
        });
    }
    Ok(out)
}

pub fn label_file_name(frame: u32) -> String {
    format!("{frame:06}.txt")
}

/// Reads every `*.txt` in `dir`, keyed by file stem, sorted by name.
pub fn read_label_dir(dir: &Path) -> Result<Vec<(String, Vec<KittiLabel>)>, FormatError> {
    let entries = fs::read_dir(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for e in entries {
        let e = e.map_err(|source| FormatError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "txt") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let labels = parse_labels(&read_file(&p)?).map_err(|e| match e {
            FormatError::Parse { line, msg, .. } => FormatError::Parse {
                context: p.display().to_string(),
                line,
                msg,
            },
            other => other,
        })?;
        out.push((stem, labels));
    }
    Ok(out)
}

// ---- detections -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub frame: u32,
    pub detection: Detection,
}

pub fn write_detections(dets: &[DetectionRecord]) -> String {
    let mut out = String::from("# frame u_min v_min u_max v_max score crop_feature\n");
    for d in dets {
        let b = &d.detection.bbox;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            d.frame,
            b.u_min,
            b.v_min,
            b.u_max,
            b.v_max,
            d.detection.score,
            d.detection.crop.feature.radians()
        );
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        let c = LineCtx {
            context: "detections",
            line,
        };
        c.expect_fields(&f, &[7])?;
        let frame: u32 = c.num(f[0], "frame")?;
        out.push(DetectionRecord {
            frame,
            detection: Detection {
                bbox: c.bbox(&f[1..5])?,
                score: c.float(f[5], "score")?,
                crop: CropDescriptor {
                    feature: c.angle(f[6], "crop_feature")?,
                    track_id: None,
                    frame: Some(frame),
                },
            },
        });
    }
    Ok(out)
}

// ---- whole scenes ---------------------------------------------------------

pub const SCENE_FILES: [&str; 9] = [
    "scene.txt",
    "calib.txt",
    "frames.txt",
    "poses.txt",
    "vehicles.txt",
    "observations.txt",
    "tracks.txt",
    "tracks_truth.txt",
    "detections.txt",
];

/// Ground-truth KITTI labels of one frame.
pub fn scene_labels(scene: &Scene, frame: u32) -> Vec<KittiLabel> {
    scene
        .observations
        .iter()
        .filter(|o| o.frame == frame)
        .map(|o| {
            KittiLabel::from_box3d(
                "Car",
                &o.box3d,
                o.clean_bbox,
                o.truth_local,
                o.truncation,
                o.occlusion,
                None,
            )
        })
        .collect()
}

pub fn scene_detections(scene: &Scene) -> Vec<DetectionRecord> {
    let mut out: Vec<DetectionRecord> = scene
        .observations
        .iter()
        .map(|o| DetectionRecord {
            frame: o.frame,
            detection: Detection {
                bbox: o.bbox,
                score: 1.0,
                crop: CropDescriptor {
                    feature: o.feature,
                    track_id: None,
                    frame: Some(o.frame),
                },
            },
        })
        .collect();
    out.sort_by_key(|d| d.frame);
    out
}

pub fn scene_truth_records(scene: &Scene) -> Vec<TruthRecord> {
    scene
        .observations
        .iter()
        .map(|o| TruthRecord {
            track_id: o.track_id,
            frame: o.frame,
            truth_local: o.truth_local,
            truth_global: o.truth_global(),
            vehicle_id: o.vehicle_id,
            motion: scene.vehicle(o.vehicle_id).map_or(MotionClass::Stationary, |v| v.motion),
        })
        .collect()
}

/// Writes every scene file plus one label file per frame under
/// `dir/labels`.
pub fn export_scene(scene: &Scene, dir: &Path) -> Result<(), FormatError> {
    create_dir(dir)?;
    let labels_dir = dir.join("labels");
    create_dir(&labels_dir)?;

    let meta = format!(
        "orient-scene {SCENE_FORMAT_VERSION}\nimage {} {}\nframe_rate {}\nslam_bias {}\n",
        scene.image_width,
        scene.image_height,
        scene.frame_rate,
        scene.slam_bias.radians()
    );
    write_file(&dir.join("scene.txt"), &meta)?;
    write_file(&dir.join("calib.txt"), &write_calib(&scene.cam))?;

    let mut frames = String::from("# frame timestamp x z yaw slam_yaw\n");
    for f in &scene.frames {
        let _ = writeln!(
            frames,
            "{} {} {} {} {} {}",
            f.frame,
            f.timestamp,
            f.ego.x,
            f.ego.z,
            f.ego.yaw.radians(),
            f.slam_yaw.radians()
        );
    }
    write_file(&dir.join("frames.txt"), &frames)?;

    // the pose file carries the SLAM yaw, as an external SLAM run would
    let slam_poses: Vec<EgoPose> = scene
        .frames
        .iter()
        .map(|f| EgoPose {
            yaw: f.slam_yaw,
            ..f.ego
        })
        .collect();
    write_file(&dir.join("poses.txt"), &write_poses(&slam_poses))?;

    let mut vehicles = String::from("# id motion h w l\n");
    for v in &scene.vehicles {
        let _ = writeln!(
            vehicles,
            "{} {} {} {} {}",
            v.id,
            v.motion.as_str(),
            v.size.h,
            v.size.w,
            v.size.l
        );
    }
    write_file(&dir.join("vehicles.txt"), &vehicles)?;

    let mut obs = String::from(
        "# track_id vehicle_id frame bbox(4) clean_bbox(4) center(3) h w l yaw truth_local truncation occlusion appearance_noise outlier feature rough_local\n",
    );
    for o in &scene.observations {
        let (b, c, x) = (&o.bbox, &o.clean_bbox, &o.box3d);
        let _ = writeln!(
            obs,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            o.track_id,
            o.vehicle_id,
            o.frame,
            b.u_min,
            b.v_min,
            b.u_max,
            b.v_max,
            c.u_min,
            c.v_min,
            c.u_max,
            c.v_max,
            x.center[0],
            x.center[1],
            x.center[2],
            x.size.h,
            x.size.w,
            x.size.l,
            x.yaw.radians(),
            o.truth_local.radians(),
            o.truncation,
            o.occlusion,
            o.appearance_noise,
            u8::from(o.outlier),
            o.feature.radians(),
            o.rough_local.radians()
        );
    }
    write_file(&dir.join("observations.txt"), &obs)?;

    write_file(&dir.join("tracks.txt"), &write_tracks(&scene.tracks()))?;
    write_file(&dir.join("tracks_truth.txt"), &write_tracks_truth(&scene_truth_records(scene)))?;
    write_file(&dir.join("detections.txt"), &write_detections(&scene_detections(scene)))?;

    let mut per_frame: Vec<Vec<KittiLabel>> = vec![Vec::new(); scene.frames.len()];
    for o in &scene.observations {
        per_frame[o.frame as usize].push(KittiLabel::from_box3d(
            "Car",
            &o.box3d,
            o.clean_bbox,
            o.truth_local,
            o.truncation,
            o.occlusion,
            None,
        ));
    }
    for (k, labels) in per_frame.iter().enumerate() {
        write_file(&labels_dir.join(label_file_name(k as u32)), &write_labels(labels))?;
    }
    Ok(())
}

fn parse_scene_meta(text: &str) -> Result<(u32, u32, f64, Angle), FormatError> {
    let mut lines = data_lines(text);
    let bad = |line: usize, msg: &str| FormatError::Parse {
        context: "scene".into(),
        line,
        msg: msg.into(),
    };
    let (line, f) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if f.len() != 2 || f[0] != "orient-scene" || f[1].parse::<u32>().ok() != Some(SCENE_FORMAT_VERSION) {
        return Err(bad(line, "expected 'orient-scene 1'"));
    }
    let (mut image, mut rate, mut bias) = (None, None, None);
    for (line, f) in lines {
        let c = LineCtx {
            context: "scene",
            line,
        };
        match f.as_slice() {
            ["image", w, h] => image = Some((c.num(w, "width")?, c.num(h, "height")?)),
            ["frame_rate", r] => rate = Some(c.float(r, "frame_rate")?),
            ["slam_bias", b] => bias = Some(c.angle(b, "slam_bias")?),
            _ => return Err(c.err("unknown entry")),
        }
    }
    let (w, h) = image.ok_or_else(|| bad(0, "missing image size"))?;
    Ok((
        w,
        h,
        rate.ok_or_else(|| bad(0, "missing frame_rate"))?,
        bias.ok_or_else(|| bad(0, "missing slam_bias"))?,
    ))
}

/// Reads a directory written by [`export_scene`].
pub fn import_scene(dir: &Path) -> Result<Scene, FormatError> {
    let (image_width, image_height, frame_rate, slam_bias) =
        parse_scene_meta(&read_file(&dir.join("scene.txt"))?)?;
    let cam = parse_calib(&read_file(&dir.join("calib.txt"))?)?;

    let mut frames = Vec::new();
    for (line, f) in data_lines(&read_file(&dir.join("frames.txt"))?) {
        let c = LineCtx {
            context: "frames",
            line,
        };
        c.expect_fields(&f, &[6])?;
        frames.push(SceneFrame {
            frame: c.num(f[0], "frame")?,
            timestamp: c.float(f[1], "timestamp")?,
            ego: EgoPose {
                x: c.float(f[2], "x")?,
                z: c.float(f[3], "z")?,
                yaw: c.angle(f[4], "yaw")?,
            },
            slam_yaw: c.angle(f[5], "slam_yaw")?,
        });
    }

    let mut vehicles = Vec::new();
    for (line, f) in data_lines(&read_file(&dir.join("vehicles.txt"))?) {
        let c = LineCtx {
            context: "vehicles",
            line,
        };
        c.expect_fields(&f, &[5])?;
        vehicles.push(VehicleTruth {
            id: c.num(f[0], "id")?,
            motion: MotionClass::parse(f[1]).ok_or_else(|| c.err("unknown motion"))?,
            size: BoxSize::new(c.float(f[2], "h")?, c.float(f[3], "w")?, c.float(f[4], "l")?)
                .map_err(|e| c.err(e.to_string()))?,
        });
    }

    let mut observations = Vec::new();
    for (line, f) in data_lines(&read_file(&dir.join("observations.txt"))?) {
        let c = LineCtx {
            context: "observations",
            line,
        };
        c.expect_fields(&f, &[25])?;
        let frame: u32 = c.num(f[2], "frame")?;
        if frame as usize >= frames.len() {
            return Err(c.err(format!("frame {frame} out of range")));
        }
        observations.push(Observation {
            track_id: c.num(f[0], "track_id")?,
            vehicle_id: c.num(f[1], "vehicle_id")?,
            frame,
            bbox: c.bbox(&f[3..7])?,
            clean_bbox: c.bbox(&f[7..11])?,
            box3d: Box3D {
                center: [c.float(f[11], "x")?, c.float(f[12], "y")?, c.float(f[13], "z")?],
                size: BoxSize::new(c.float(f[14], "h")?, c.float(f[15], "w")?, c.float(f[16], "l")?)
                    .map_err(|e| c.err(e.to_string()))?,
                yaw: c.angle(f[17], "yaw")?,
            },
            truth_local: c.angle(f[18], "truth_local")?,
            truncation: c.float(f[19], "truncation")?,
            occlusion: c.num(f[20], "occlusion")?,
            appearance_noise: c.float(f[21], "appearance_noise")?,
            outlier: match f[22] {
                "0" => false,
                "1" => true,
                other => return Err(c.err(format!("invalid outlier flag '{other}'"))),
            },
            feature: c.angle(f[23], "feature")?,
            rough_local: c.angle(f[24], "rough_local")?,
        });
    }

    Ok(Scene {
        cam,
        image_width,
        image_height,
        frame_rate,
        slam_bias,
        frames,
        vehicles,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scene, EgoConfig, EgoSegment, ScenarioConfig, TrafficConfig};
    use proptest::prelude::*;

    fn small_scene() -> Scene {
        let cfg = ScenarioConfig {
            ego: EgoConfig {
                segments: vec![
                    EgoSegment::Straight {
                        length: 70.0,
                        speed: 7.0,
                    },
                    EgoSegment::Arc {
                        length: 30.0,
                        speed: 10.0,
                        turn_deg: 45.0,
                    },
                ],
            },
            traffic: TrafficConfig {
                count: 40,
                moving_fraction: 0.2,
                turning_fraction: 0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        generate_scene(&cfg).unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        export_scene(&scene, dir.path()).unwrap();
        assert_eq!(import_scene(dir.path()).unwrap(), scene);
    }

    #[test]
    fn line_counts_match_visibility() {
        let scene = small_scene();
        assert_eq!(scene.frames.len(), 131);
        let dir = tempfile::tempdir().unwrap();
        export_scene(&scene, dir.path()).unwrap();
        let count = |name: &str| data_lines(&read_file(&dir.path().join(name)).unwrap()).count();
        let n = scene.observations.len();
        assert!(n > 0);
        assert_eq!(count("tracks.txt"), n);
        assert_eq!(count("tracks_truth.txt"), n);
        assert_eq!(count("observations.txt"), n);
        assert_eq!(count("detections.txt"), n);
        assert_eq!(count("poses.txt"), scene.frames.len());
        assert_eq!(count("frames.txt"), scene.frames.len());
        let labels = read_label_dir(&dir.path().join("labels")).unwrap();
        assert_eq!(labels.len(), scene.frames.len());
        for (k, (stem, l)) in labels.iter().enumerate() {
            assert_eq!(stem, &format!("{k:06}"));
            assert_eq!(l.len(), scene.observations.iter().filter(|o| o.frame as usize == k).count());
        }
    }

    #[test]
    fn empty_scene_writes_valid_empty_files() {
        let cfg = ScenarioConfig {
            traffic: TrafficConfig {
                count: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_scene(&scene, dir.path()).unwrap();
        for f in SCENE_FILES {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(import_scene(dir.path()).unwrap(), scene);
        let tracks = read_tracks(&read_file(&dir.path().join("tracks.txt")).unwrap(), &scene.cam).unwrap();
        assert!(tracks.is_empty());
    }

    #[test]
    fn tracks_round_trip_with_truth() {
        let scene = small_scene();
        let mut expected = scene.tracks();
        let mut read = read_tracks(&write_tracks(&expected), &scene.cam).unwrap();
        attach_truth(&mut read, &parse_tracks_truth(&write_tracks_truth(&scene_truth_records(&scene))).unwrap());
        for t in &mut expected {
            for f in &mut t.frames {
                f.crop.track_id = Some(t.track_id);
            }
        }
        assert_eq!(read, expected);
    }

    #[test]
    fn tracks_reader_rejects_bad_input() {
        let cam = CameraIntrinsics::new(700.0, 700.0, 600.0, 180.0).unwrap();
        assert!(read_tracks("1 0 0.0 10 10 20 20 0.1", &cam).is_err()); // no angle source
        assert!(read_tracks("1 0 0.0 10 10 20 20 0.1 0.2 x", &cam).is_err());
        assert!(read_tracks("1 0 0.0 10 10 5 20 0.1 0.2", &cam).is_err());
        assert!(read_tracks("1 1 0.1 10 10 20 20 0 0\n1 0 0.0 10 10 20 20 0 0", &cam).is_err());
        assert!(read_tracks("1 0 0.0 10 10 20 20 0 0\n2 0 0.0 10 10 20 20 0 0\n1 1 0.1 10 10 20 20 0 0", &cam).is_err());
        let ok = read_tracks("# c\n\n1 0 0.0 10 10 20 20 0.1 - 0.3\n1 1 0.1 10 10 20 20 0.1 0.2\n", &cam).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].frames[0].rough_local, None);
        assert!((ok[0].frames[0].crop.feature.radians() - 0.3).abs() < 1e-15);
        assert!((ok[0].frames[1].crop.feature.radians() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn calib_parsing() {
        let cam = CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854).unwrap();
        assert_eq!(parse_calib(&write_calib(&cam)).unwrap(), cam);
        let kitti = "P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00\n\
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n";
        assert_eq!(parse_calib(kitti).unwrap(), cam);
        assert!(parse_calib("P0: 1 2 3").is_err());
        assert!(parse_calib("P2: 1 2 3").is_err());
        assert!(parse_calib("P2: -7 0 600 0 0 7 170 0 0 0 1 0").is_err());
    }

    #[test]
    fn poses_parsing() {
        let poses = vec![
            EgoPose { x: 1.5, z: -2.0, yaw: Angle::wrap(0.3) },
            EgoPose { x: 0.0, z: 0.0, yaw: Angle::wrap(-3.0) },
        ];
        let back = parse_poses(&write_poses(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!((a.x, a.z), (b.x, b.z));
            assert!(a.yaw.distance(b.yaw) < 1e-15);
        }
        assert!(parse_poses("1 0 0 0 0 1 0 0 0 0 2 0").is_err());
        assert!(parse_poses("1 0 0 0 0 1 0 0 0 0 1").is_err());
    }

    #[test]
    fn label_bottom_center_convention() {
        let b = Box3D {
            center: [1.0, 0.885, 20.0],
            size: BoxSize { h: 1.53, w: 1.63, l: 3.88 },
            yaw: Angle::wrap(0.5),
        };
        let l = KittiLabel::from_box3d("Car", &b, Box2D::new(1.0, 2.0, 3.0, 4.0).unwrap(), Angle::wrap(0.1), 0.0, 0, Some(0.9));
        assert!((l.location[1] - 1.65).abs() < 1e-12);
        let back = parse_labels(&write_labels(std::slice::from_ref(&l))).unwrap();
        assert_eq!(back, vec![l.clone()]);
        let rb = back[0].box3d();
        assert!((rb.center[1] - b.center[1]).abs() < 1e-12);
        let kitti = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n\
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let parsed = parse_labels(kitti).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].score, None);
        assert!(parse_labels("Car 0 0 0 1 2 3 4 1 1 1 0 0 10").is_err());
    }

    #[test]
    fn detections_round_trip() {
        let scene = small_scene();
        let dets = scene_detections(&scene);
        assert_eq!(parse_detections(&write_detections(&dets)).unwrap(), dets);
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(x in -1e6f64..1e6, tiny in -1e-300f64..1e-300) {
            for v in [x, tiny] {
                let s = format!("{v}");
                prop_assert_eq!(s.parse::<f64>().unwrap(), v);
            }
        }
    }
}
