//! Synthetic scenes, the velocity scenarios and a sparse observation renderer.
//!
//! The simulator anchors the world frame at the first viewpoint row (row 0):
//! the static pose is the identity and every row `t_row > 0` sees the scene
//! displaced by the scenario motion. Rotations act about the scene centroid.

use std::f64::consts::PI;

use nalgebra::{Matrix3xX, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{
    project_point, CameraPose, ImagePoint, LightFieldIntrinsics, MotionState,
};
use crate::observations::ObservationSet;
use crate::par;
use crate::rotation::{axis_angle, euler_xyz, Vec3};

/// Depth of the point the rig's optical axes converge on.
pub const SCENE_ANCHOR_DEPTH: f64 = 7.0;

/// Rig modeled after the benchmark camera array: 50 mm main lens, a 9×9
/// viewpoint grid with 6 mm pitch centered on the optical axis, and one frame
/// spread over the nine viewpoint rows (`τ = 1/9` frame per row).
///
/// Micro-lens focal (1 mm) and sensor distance (60 mm) are fixed defaults.
pub fn default_rig() -> LightFieldIntrinsics {
    let rows = 9;
    let pitch = 0.006;
    let half = pitch * (rows as f64 - 1.0) / 2.0;
    LightFieldIntrinsics {
        main_focal: 0.05,
        micro_focal: 0.001,
        offset_x: 0.0,
        offset_y: 0.0,
        sensor_distance: 0.06,
        line_period: frame_line_period(rows),
        grid_rows: rows,
        grid_cols: rows,
        pitch,
        origin_s: -half,
        origin_t: -half,
    }
}

/// Line period in frame units when one frame spans `frame_rows` viewpoint rows.
pub fn frame_line_period(frame_rows: usize) -> f64 {
    assert!(frame_rows >= 1, "a frame spans at least one row");
    1.0 / frame_rows as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub rng_seed: u64,
    pub points: Vec<Vec3>,
}

impl Scene {
    /// `n` points uniformly drawn in a box centered on `(0, 0, depth)`.
    pub fn random_box(name: &str, n: usize, depth: f64, half_extent: Vec3, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0) * half_extent.x,
                    rng.random_range(-1.0..1.0) * half_extent.y,
                    depth + rng.random_range(-1.0..1.0) * half_extent.z,
                )
            })
            .collect();
        Self {
            name: name.to_owned(),
            rng_seed: seed,
            points,
        }
    }

    /// The standard test scene: 50 points in a 2 m × 2 m × 1 m box at 7 m.
    pub fn standard(seed: u64) -> Self {
        Self::random_box("standard", 50, SCENE_ANCHOR_DEPTH, Vector3::new(1.0, 1.0, 0.5), seed)
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::zeros(), |a, p| a + p);
        sum / self.points.len().max(1) as f64
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::from_points(self.points.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation(format!("scene `{}` has no points", self.name)));
        }
        if let Some(k) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Validation(format!(
                "scene `{}` point {k} is not finite",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    #[serde(rename = "GS")]
    Gs,
    Slow,
    Fast,
}

impl MotionClass {
    pub fn label(self) -> &'static str {
        match self {
            MotionClass::Gs => "GS",
            MotionClass::Slow => "slow",
            MotionClass::Fast => "fast",
        }
    }

    pub fn of_id(id: u8) -> Self {
        match id {
            0 => MotionClass::Gs,
            1..=5 => MotionClass::Slow,
            _ => MotionClass::Fast,
        }
    }
}

/// Per-frame camera velocity: intrinsic XYZ Euler angles (rad/frame) and a
/// translation (m/frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionScenario {
    pub id: u8,
    pub class: MotionClass,
    pub euler_rotation: Vec3,
    pub translation: Vec3,
}

const SCENARIO_TABLE: [([f64; 3], [f64; 3]); 11] = [
    ([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ([0.0, 0.0, PI / 12.0], [0.0, 0.0, 0.0]),
    ([0.0, 0.0, 0.0], [0.0, -0.2, 0.0]),
    ([-PI / 18.0, 0.0, 0.0], [0.0, -0.05, 0.05]),
    ([PI / 18.0, PI / 18.0, 0.0], [0.0, 0.0, 0.2]),
    ([0.0, 0.0, PI / 12.0], [0.0, -0.2, 0.0]),
    ([0.0, 0.0, PI / 3.0], [0.0, 0.0, 0.0]),
    ([0.0, 0.0, 0.0], [0.0, -0.8, 0.0]),
    ([-PI / 3.0, 0.0, 0.0], [0.0, 0.4, 0.2]),
    ([2.0 * PI / 9.0, 0.0, 0.0], [0.4, -1.6, -0.8]),
    ([0.0, 0.0, PI / 2.0], [0.0, -0.8, 0.0]),
];

impl MotionScenario {
    /// One of the eleven benchmark scenarios: 0 is static, 1–5 slow, 6–10 fast.
    pub fn benchmark(id: u8) -> Option<Self> {
        let (euler, translation) = SCENARIO_TABLE.get(id as usize)?;
        Some(Self {
            id,
            class: MotionClass::of_id(id),
            euler_rotation: Vec3::from(*euler),
            translation: Vec3::from(*translation),
        })
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..SCENARIO_TABLE.len() as u8).filter_map(Self::benchmark)
    }

    /// Same direction, velocities multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            euler_rotation: self.euler_rotation * factor,
            translation: self.translation * factor,
            ..*self
        }
    }
}

/// Axis–angle form of a scenario: `Ω` in rad/frame, `v` in m/frame, rotating
/// about the origin. Use [`MotionState::center`] to move the rotation center.
pub fn scenario_to_motion(sc: &MotionScenario) -> MotionState {
    let (axis, angle) = axis_angle(&euler_xyz(&sc.euler_rotation));
    MotionState {
        axis,
        angular_speed: angle,
        linear_velocity: sc.translation,
        center: Vec3::zeros(),
    }
}

/// Motion a scene undergoes under a scenario: rotation about its centroid.
pub fn scene_motion(scene: &Scene, sc: &MotionScenario) -> MotionState {
    MotionState {
        center: scene.centroid(),
        ..scenario_to_motion(sc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Drop projections whose camera-frame direction deviates from the optical
    /// axis by more than this half-angle (radians). Off by default.
    pub fov_half_angle: Option<f64>,
}

/// Renders every scene point into every grid viewpoint under a scenario.
pub fn simulate(
    scene: &Scene,
    sc: &MotionScenario,
    intr: &LightFieldIntrinsics,
    noise_sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    simulate_motion(scene, &scene_motion(scene, sc), intr, noise_sigma, seed, &SimOptions::default())
}

/// [`simulate`] with an explicit motion.
///
/// Noise for point `i` comes from its own ChaCha stream (`seed`, stream `i`),
/// drawn in `(row, col)` order, two normals per viewpoint whether or not the
/// projection survives. Output is identical whatever the thread count.
pub fn simulate_motion(
    scene: &Scene,
    motion: &MotionState,
    intr: &LightFieldIntrinsics,
    noise_sigma: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<ObservationSet> {
    scene.validate()?;
    intr.validate()?;
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Validation(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let pose = CameraPose::identity();
    let render_point = |(id, p): (usize, &Vec3)| -> Vec<ImagePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let mut out = Vec::with_capacity(intr.grid_rows * intr.grid_cols);
        for vp in intr.viewpoints() {
            let nx: f64 = normal.sample(&mut rng);
            let ny: f64 = normal.sample(&mut rng);
            if let Some(half_angle) = opts.fov_half_angle {
                let q = motion.displace(p, intr.line_period, vp.row);
                let off_axis = (q.x * q.x + q.y * q.y).sqrt().atan2(q.z);
                if off_axis > half_angle {
                    continue;
                }
            }
            if let Ok((x, y)) = project_point(p, &pose, motion, intr, &vp) {
                out.push(ImagePoint {
                    point_id: id as u32,
                    viewpoint: vp,
                    x: x + nx,
                    y: y + ny,
                });
            }
        }
        out
    };
    let records: Vec<ImagePoint> = par::map_indexed(&scene.points, render_point)
        .into_iter()
        .flatten()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyObservations);
    }
    ObservationSet::new(records, *intr, noise_sigma, seed)
}

/// Outcome of the observability pre-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observability {
    pub n_points: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    /// `None` when no 3D hint was supplied.
    pub non_coplanar: Option<bool>,
    /// Smallest and largest singular values of the centered hint points.
    pub singular_values: Option<(f64, f64)>,
    pub observable: bool,
    pub reasons: Vec<String>,
}

/// Relative threshold on the smallest singular value of the centered points.
pub const COPLANARITY_TOLERANCE: f64 = 1e-9;

/// Checks that at least four non-coplanar points are seen on at least two
/// viewpoint rows and two viewpoint columns.
pub fn check_observability(obs: &ObservationSet, hint: Option<&PointCloud>) -> Observability {
    let ids = obs.point_ids();
    let n_rows = obs.rows().len();
    let n_cols = obs.cols().len();
    let mut reasons = Vec::new();
    if ids.len() < 4 {
        reasons.push(format!(
            "at least four distinct points are required, found {}",
            ids.len()
        ));
    }
    if n_rows < 2 || n_cols < 2 {
        reasons.push(format!(
            "points must be seen on two different rows and two different columns \
             of viewpoints (rows: {n_rows}, columns: {n_cols})"
        ));
    }
    let mut non_coplanar = None;
    let mut singular_values = None;
    if let Some(cloud) = hint {
        let pts: Vec<Vec3> = ids.iter().filter_map(|&id| cloud.get(id).copied()).collect();
        if pts.len() >= 4 {
            let (smallest, largest) = centered_singular_range(&pts);
            let ok = smallest > COPLANARITY_TOLERANCE * largest;
            singular_values = Some((smallest, largest));
            non_coplanar = Some(ok);
            if !ok {
                reasons.push(format!(
                    "the points are coplanar (smallest singular value {smallest:e}, spread {largest:e}); \
                     at least four non-coplanar points are required"
                ));
            }
        } else {
            non_coplanar = Some(false);
            reasons.push("fewer than four points have a 3D estimate".into());
        }
    }
    Observability {
        n_points: ids.len(),
        n_rows,
        n_cols,
        non_coplanar,
        singular_values,
        observable: reasons.is_empty(),
        reasons,
    }
}

fn centered_singular_range(points: &[Vec3]) -> (f64, f64) {
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let m = Matrix3xX::from_columns(&points.iter().map(|p| p - mean).collect::<Vec<_>>());
    let sv = m.singular_values();
    (sv.min(), sv.max())
}
