//! Angle arithmetic, pinhole projection and box overlap measures.
//!
//! Camera frame convention: X right, Y down, Z forward. A yaw (rotation about
//! the vertical axis) of zero aligns a box's length with +X; the heading of a
//! box with yaw `θ` points along `(cos θ, −sin θ)` in the X–Z plane. The ray
//! angle of a point is `atan2(X, Z)`, so global yaw = ray angle + local angle.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use thiserror::Error;

/// Depth below which a corner counts as being on or behind the image plane.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

/// Intersections with an area below this (m² or px²) are treated as empty.
pub const AREA_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("angle must be finite, got {0}")]
    NonFinite(f64),
    #[error("invalid camera intrinsics: fx={fx}, fy={fy}")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("invalid 2D box [{u_min}, {v_min}, {u_max}, {v_max}]")]
    InvalidBox2D {
        u_min: f64,
        v_min: f64,
        u_max: f64,
        v_max: f64,
    },
    #[error("invalid box size h={h}, w={w}, l={l}")]
    InvalidSize { h: f64, w: f64, l: f64 },
    #[error("box corner at depth {z} m is on or behind the image plane")]
    BehindCamera { z: f64 },
}

/// An angle in radians, always normalized to `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    /// Wraps a finite radian value; rejects NaN and infinities.
    pub fn new(radians: f64) -> Result<Self, GeometryError> {
        wrap_angle(radians)
    }

    pub fn from_degrees(degrees: f64) -> Result<Self, GeometryError> {
        wrap_angle(degrees.to_radians())
    }

    /// Wraps a value known to be finite.
    ///
    /// Panics if `radians` is NaN or infinite.
    pub fn wrap(radians: f64) -> Self {
        match wrap_angle(radians) {
            Ok(a) => a,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    /// Unsigned circular distance in `[0, π]`.
    pub fn distance(self, other: Angle) -> f64 {
        angle_diff(self, other).0.abs()
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}°", self.degrees())
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle::wrap(self.0 + rhs.0)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle::wrap(self.0 - rhs.0)
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle::wrap(-self.0)
    }
}

/// Reduces `x` into `(−π, π]`.
pub fn wrap_angle(x: f64) -> Result<Angle, GeometryError> {
    if !x.is_finite() {
        return Err(GeometryError::NonFinite(x));
    }
    if x > -PI && x <= PI {
        return Ok(Angle(x));
    }
    let mut r = x.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r <= -PI {
        r += TAU;
    }
    Ok(Angle(r))
}

/// `wrap(a − b)`.
pub fn angle_diff(a: Angle, b: Angle) -> Angle {
    a - b
}

/// Resultant-vector mean. `None` for an empty input or a zero resultant.
pub fn circular_mean<I>(angles: I) -> Option<Angle>
where
    I: IntoIterator<Item = Angle>,
{
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        s += a.0.sin();
        c += a.0.cos();
        n += 1;
    }
    if n == 0 || (s == 0.0 && c == 0.0) {
        return None;
    }
    Some(Angle::wrap(s.atan2(c)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !cx.is_finite()
            || !cy.is_finite()
        {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Projects a camera-frame point; the caller guarantees `z > 0`.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ]
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        let b = Self {
            u_min,
            v_min,
            u_max,
            v_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox2D {
                u_min,
                v_min,
                u_max,
                v_max,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.u_min, self.v_min, self.u_max, self.v_max]
            .iter()
            .all(|v| v.is_finite())
            && self.u_min < self.u_max
            && self.v_min < self.v_max
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        ]
    }

    /// Intersection with another rectangle, `None` when the overlap is empty.
    pub fn intersect(&self, other: &Box2D) -> Option<Box2D> {
        let b = Box2D {
            u_min: self.u_min.max(other.u_min),
            v_min: self.v_min.max(other.v_min),
            u_max: self.u_max.min(other.u_max),
            v_max: self.v_max.min(other.v_max),
        };
        (b.u_min < b.u_max && b.v_min < b.v_max).then_some(b)
    }
}

/// Box extents in meters: height (Y), width and length (footprint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSize {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl BoxSize {
    pub fn new(h: f64, w: f64, l: f64) -> Result<Self, GeometryError> {
        if h > 0.0 && w > 0.0 && l > 0.0 && h.is_finite() && w.is_finite() && l.is_finite() {
            Ok(Self { h, w, l })
        } else {
            Err(GeometryError::InvalidSize { h, w, l })
        }
    }
}

/// Upright cuboid in the camera frame. `center` is the geometric center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: BoxSize,
    pub yaw: Angle,
}

impl Box3D {
    pub fn volume(&self) -> f64 {
        self.size.h * self.size.w * self.size.l
    }

    /// Footprint corners in the X–Z plane, counterclockwise with X as the
    /// abscissa and Z as the ordinate.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.radians().sin_cos();
        let (hl, hw) = (0.5 * self.size.l, 0.5 * self.size.w);
        let local = [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]];
        local.map(|[x, z]| {
            [
                self.center[0] + c * x + s * z,
                self.center[2] - s * x + c * z,
            ]
        })
    }

    /// Vertical extent `(y_top, y_bottom)`; Y grows downward.
    pub fn y_range(&self) -> (f64, f64) {
        let hh = 0.5 * self.size.h;
        (self.center[1] - hh, self.center[1] + hh)
    }
}

/// Planar ego pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub x: f64,
    pub z: f64,
    pub yaw: Angle,
}

impl EgoPose {
    /// Expresses a world-frame point `(x, z)` in this pose's camera frame.
    pub fn to_camera(&self, x: f64, z: f64) -> [f64; 2] {
        let (s, c) = self.yaw.radians().sin_cos();
        let (dx, dz) = (x - self.x, z - self.z);
        [c * dx - s * dz, s * dx + c * dz]
    }
}

/// Horizontal angle of the ray through the box center.
pub fn ray_angle(bbox: &Box2D, cam: &CameraIntrinsics) -> Angle {
    let uc = 0.5 * (bbox.u_min + bbox.u_max);
    Angle::wrap((uc - cam.cx).atan2(cam.fx))
}

pub fn global_from_local(local: Angle, ray: Angle) -> Angle {
    ray + local
}

pub fn local_from_global(global: Angle, ray: Angle) -> Angle {
    global - ray
}

/// The eight corners of `b`: bottom face (larger Y) first, counterclockwise
/// in the X–Z plane as in [`Box3D::footprint`], then the top face in the
/// same order.
pub fn box3d_corners(b: &Box3D) -> [[f64; 3]; 8] {
    let fp = b.footprint();
    let (top, bottom) = b.y_range();
    let mut out = [[0.0; 3]; 8];
    for (i, [x, z]) in fp.iter().copied().enumerate() {
        out[i] = [x, bottom, z];
        out[i + 4] = [x, top, z];
    }
    out
}

/// Axis-aligned hull of the projected corners.
pub fn project_box3d(b: &Box3D, cam: &CameraIntrinsics) -> Result<Box2D, GeometryError> {
    let mut hull = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in box3d_corners(b) {
        if !(p[2] > MIN_PROJECTION_DEPTH) {
            return Err(GeometryError::BehindCamera { z: p[2] });
        }
        let [u, v] = cam.project(p);
        hull[0] = hull[0].min(u);
        hull[1] = hull[1].min(v);
        hull[2] = hull[2].max(u);
        hull[3] = hull[3].max(v);
    }
    Ok(Box2D {
        u_min: hull[0],
        v_min: hull[1],
        u_max: hull[2],
        v_max: hull[3],
    })
}

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersect(b).map_or(0.0, |i| i.area());
    if inter <= AREA_EPSILON {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area, positive for counterclockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Sutherland–Hodgman: clips `subject` against the convex, counterclockwise
/// polygon `clip`.
pub fn clip_convex_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(segment_crossing(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(segment_crossing(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn segment_crossing(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Footprint intersection area of two upright boxes.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let area = polygon_area(&clip_convex_polygon(&a.footprint(), &b.footprint()));
    if area <= AREA_EPSILON {
        0.0
    } else {
        area
    }
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.size.l * a.size.w + b.size.l * b.size.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (at, ab) = a.y_range();
    let (bt, bb) = b.y_range();
    let overlap_h = ab.min(bb) - at.max(bt);
    if overlap_h <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap_h;
    if inter <= AREA_EPSILON {
        return 0.0;
    }
    ((inter) / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}
