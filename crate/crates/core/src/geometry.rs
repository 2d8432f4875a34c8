//! Rolling-shutter light-field projection.
//!
//! A world point is first moved into the camera frame by the static pose, then
//! displaced by the constant-velocity motion accumulated up to the viewpoint row
//! that observes it, and finally imaged by the per-viewpoint intrinsic tensor
//! `K^{s,t}` (thin main lens, view-plane offset and micro-lens pinhole folded
//! into a single 3×4 matrix).
//!
//! Micro-image coordinates are metric: `(x, y)` live on the image plane behind
//! each micro-lens and carry no pixel scale.
//!
//! Time enters only through the integer viewpoint row: the row `t_row` is
//! exposed at `τ · t_row`. The metric row coordinate `t` enters only `K^{s,t}`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{rodrigues, unit_or_z, Mat3, Vec3};

pub type Mat34 = Matrix3x4<f64>;

/// Default threshold on the homogeneous depth scale `|w|` (meters).
pub const DEFAULT_W_EPSILON: f64 = 1e-12;

/// Calibrated optics of the plenoptic camera plus the viewpoint grid layout.
///
/// Field names in JSON follow the usual optical symbols (`F`, `f`, `Ox`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightFieldIntrinsics {
    /// Main-lens focal length.
    #[serde(rename = "F")]
    pub main_focal: f64,
    /// Micro-lens focal length (view plane to image plane).
    #[serde(rename = "f")]
    pub micro_focal: f64,
    #[serde(rename = "Ox")]
    pub offset_x: f64,
    #[serde(rename = "Oy")]
    pub offset_y: f64,
    /// Main-lens optical center to view plane.
    #[serde(rename = "d")]
    pub sensor_distance: f64,
    /// Delay between two consecutive viewpoint rows.
    #[serde(rename = "tau")]
    pub line_period: f64,
    #[serde(rename = "rows")]
    pub grid_rows: usize,
    #[serde(rename = "cols")]
    pub grid_cols: usize,
    /// Distance between adjacent viewpoint centers.
    pub pitch: f64,
    pub origin_s: f64,
    pub origin_t: f64,
}

impl LightFieldIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("F", self.main_focal),
            ("f", self.micro_focal),
            ("d", self.sensor_distance),
            ("pitch", self.pitch),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidIntrinsics(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if !(self.line_period.is_finite() && self.line_period >= 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "tau must be finite and non-negative, got {}",
                self.line_period
            )));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InvalidIntrinsics(
                "grid must have at least one row and one column".into(),
            ));
        }
        for (name, value) in [
            ("Ox", self.offset_x),
            ("Oy", self.offset_y),
            ("origin_s", self.origin_s),
            ("origin_t", self.origin_t),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidIntrinsics(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    /// Metric `(s, t)` of the viewpoint at grid index `(row, col)`.
    pub fn viewpoint_metric(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_s + self.pitch * col as f64,
            self.origin_t + self.pitch * row as f64,
        )
    }

    pub fn viewpoint(&self, row: usize, col: usize) -> Option<Viewpoint> {
        (row < self.grid_rows && col < self.grid_cols).then(|| {
            let (s, t) = self.viewpoint_metric(row, col);
            Viewpoint { row, col, s, t }
        })
    }

    /// All grid viewpoints, row-major.
    pub fn viewpoints(&self) -> impl Iterator<Item = Viewpoint> + '_ {
        (0..self.grid_rows).flat_map(move |row| {
            (0..self.grid_cols).map(move |col| {
                let (s, t) = self.viewpoint_metric(row, col);
                Viewpoint { row, col, s, t }
            })
        })
    }

    /// Row index of the center of the grid (the mid-exposure row).
    pub fn center_row(&self) -> f64 {
        (self.grid_rows as f64 - 1.0) / 2.0
    }
}

/// One micro-lens acting as a pinhole projection center `(s, t, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub row: usize,
    pub col: usize,
    pub s: f64,
    pub t: f64,
}

/// Static pose `[R | T]` mapping world coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Constant camera velocity during the light-field exposure.
///
/// The rotation acts about the center `center`; with `center = 0` the axis
/// passes through the main-lens optical center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub axis: Vec3,
    pub angular_speed: f64,
    pub linear_velocity: Vec3,
    pub center: Vec3,
}

impl Default for MotionState {
    fn default() -> Self {
        Self::stationary()
    }
}

impl MotionState {
    pub fn stationary() -> Self {
        Self {
            axis: Vector3::z(),
            angular_speed: 0.0,
            linear_velocity: Vec3::zeros(),
            center: Vec3::zeros(),
        }
    }

    /// Builds the motion from a rotation vector `ω = Ω·a`.
    pub fn from_rotation_vector(omega: &Vec3, linear_velocity: Vec3, center: Vec3) -> Self {
        Self {
            axis: unit_or_z(omega),
            angular_speed: omega.norm(),
            linear_velocity,
            center,
        }
    }

    pub fn rotation_vector(&self) -> Vec3 {
        self.axis * self.angular_speed
    }

    pub fn is_stationary(&self) -> bool {
        self.angular_speed == 0.0 && self.linear_velocity == Vec3::zeros()
    }

    /// Moves a camera-frame point to where row `t_row` sees it.
    #[inline]
    pub fn displace(&self, p_cam: &Vec3, line_period: f64, t_row: usize) -> Vec3 {
        let angle = self.angular_speed * line_period * t_row as f64;
        let rotated = if angle == 0.0 {
            *p_cam
        } else {
            self.center + rodrigues(&self.axis, angle) * (p_cam - self.center)
        };
        rotated + delta_translation(self, line_period, t_row)
    }

    /// [`displace`](Self::displace) for a fractional row.
    pub fn displace_at(&self, p_cam: &Vec3, line_period: f64, row: f64) -> Vec3 {
        let elapsed = line_period * row;
        if elapsed == 0.0 {
            return *p_cam;
        }
        let rot = rodrigues(&self.axis, self.angular_speed * elapsed);
        self.center + rot * (p_cam - self.center) + self.linear_velocity * elapsed
    }
}

/// A matched point on the image plane of one viewpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub point_id: u32,
    pub viewpoint: Viewpoint,
    pub x: f64,
    pub y: f64,
}

/// Per-viewpoint intrinsic tensor `K^{s,t}`.
#[rustfmt::skip]
pub fn intrinsic_tensor(intr: &LightFieldIntrinsics, vp: &Viewpoint) -> Mat34 {
    let f = intr.micro_focal;
    let big_f = intr.main_focal;
    let dx = intr.offset_x - vp.s;
    let dy = intr.offset_y - vp.t;
    Mat34::new(
        f, 0.0, -(f / big_f) * dx, f * dx,
        0.0, f, -(f / big_f) * dy, f * dy,
        0.0, 0.0, 1.0 - intr.sensor_distance / big_f, intr.sensor_distance,
    )
}

/// Rotation accumulated by row `t_row`.
pub fn delta_rotation(motion: &MotionState, line_period: f64, t_row: usize) -> Mat3 {
    let angle = motion.angular_speed * line_period * t_row as f64;
    if angle == 0.0 {
        return Mat3::identity();
    }
    rodrigues(&motion.axis, angle)
}

/// Translation accumulated by row `t_row`.
pub fn delta_translation(motion: &MotionState, line_period: f64, t_row: usize) -> Vec3 {
    motion.linear_velocity * (line_period * t_row as f64)
}

/// Images a point already expressed in the (displaced) camera frame.
#[inline]
pub fn image_camera_point(
    q: &Vec3,
    intr: &LightFieldIntrinsics,
    vp: &Viewpoint,
    w_epsilon: f64,
) -> Result<(f64, f64)> {
    let h = intrinsic_tensor(intr, vp) * Vector4::new(q.x, q.y, q.z, 1.0);
    if !(h.z.abs() >= w_epsilon) {
        return Err(Error::DepthDegenerate { w: h.z });
    }
    Ok((h.x / h.z, h.y / h.z))
}

/// Full rolling-shutter projection of a world point into viewpoint `vp`.
pub fn project_point(
    p_world: &Vec3,
    pose: &CameraPose,
    motion: &MotionState,
    intr: &LightFieldIntrinsics,
    vp: &Viewpoint,
) -> Result<(f64, f64)> {
    project_point_eps(p_world, pose, motion, intr, vp, DEFAULT_W_EPSILON)
}

pub fn project_point_eps(
    p_world: &Vec3,
    pose: &CameraPose,
    motion: &MotionState,
    intr: &LightFieldIntrinsics,
    vp: &Viewpoint,
    w_epsilon: f64,
) -> Result<(f64, f64)> {
    let q = motion.displace(&pose.transform(p_world), intr.line_period, vp.row);
    image_camera_point(&q, intr, vp, w_epsilon)
}

/// Global-shutter projection: the static pose followed by `K^{s,t}`.
pub fn gs_projection(
    p_world: &Vec3,
    pose: &CameraPose,
    intr: &LightFieldIntrinsics,
    vp: &Viewpoint,
) -> Result<(f64, f64)> {
    image_camera_point(&pose.transform(p_world), intr, vp, DEFAULT_W_EPSILON)
}

/// Equivalent conventional camera of the on-axis viewpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeReduction {
    /// `[[f, 0, c_x], [0, f, c_y], [0, 0, 1]]`.
    pub camera: Matrix3<f64>,
    /// Placement such that `camera * placement == K^{0,0}`.
    pub placement: Mat34,
}

/// Factors `K^{0,0}` into a pinhole matrix with principal point
/// `c = (d/F − 1)(f/F)·O` and the matching 3×4 placement.
pub fn pinhole_reduction(intr: &LightFieldIntrinsics) -> Result<PinholeReduction> {
    if intr.offset_x == 0.0 || intr.offset_y == 0.0 {
        return Err(Error::ReductionUndefined {
            ox: intr.offset_x,
            oy: intr.offset_y,
        });
    }
    let f = intr.micro_focal;
    let big_f = intr.main_focal;
    let d = intr.sensor_distance;
    let scale = (d / big_f - 1.0) * (f / big_f);
    let cx = scale * intr.offset_x;
    let cy = scale * intr.offset_y;
    let camera = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);

    // camera⁻¹ · K^{0,0}, written out: rows 1–2 subtract c·row3 and divide by f.
    let on_axis = Viewpoint {
        row: 0,
        col: 0,
        s: 0.0,
        t: 0.0,
    };
    let k = intrinsic_tensor(intr, &on_axis);
    let mut placement = Mat34::zeros();
    for col in 0..4 {
        placement[(0, col)] = (k[(0, col)] - cx * k[(2, col)]) / f;
        placement[(1, col)] = (k[(1, col)] - cy * k[(2, col)]) / f;
        placement[(2, col)] = k[(2, col)];
    }
    Ok(PinholeReduction { camera, placement })
}
