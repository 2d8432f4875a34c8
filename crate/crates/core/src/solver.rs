//! Joint shape and motion refinement.
//!
//! The cost is the summed squared re-projection error over every observation,
//! with points expressed relative to a center of rotation `g` and scaled by a
//! fixed factor `λ_n`:
//!
//! ```text
//! p      = λ_n · p_n + g
//! q(t)   = g + exp(ω τ t) (p − g) + v τ t
//! (u,v,w) = K^{s,t} (q, 1)ᵀ,   ξ = (u/w, v/w)
//! ε      = Σ ‖m̃ − ξ‖²
//! ```
//!
//! The world frame is the camera frame of viewpoint row 0. Free parameters are
//! the normalized points, `g`, the rotation vector `ω = Ω·a` and the linear
//! velocity `v`; ablation modes freeze subsets of them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamParams};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{intrinsic_tensor, ImagePoint, LightFieldIntrinsics, MotionState, DEFAULT_W_EPSILON};
use crate::init::InitReport;
use crate::observations::ObservationSet;
use crate::par::{self, Execution};
use crate::rotation::{exp_so3, rotate_jacobian, Vec3};
use crate::sim::{check_observability, Observability};

/// Lower bound on the normalization factor (meters).
pub const MIN_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    /// Initial center of rotation.
    pub center: Vec3,
    /// `λ_n`, fixed during the solve.
    pub scale: f64,
}

impl NormalizationFrame {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }
}

/// Centers a cloud on its mean and scales it into `[-1, 1]³`.
///
/// `λ_n` is the largest absolute coordinate deviation from the mean.
pub fn normalize(cloud: &PointCloud) -> (Vec<Vec3>, NormalizationFrame) {
    let center = cloud.centroid().unwrap_or_else(Vec3::zeros);
    let scale = cloud
        .points
        .iter()
        .map(|p| (p - center).amax())
        .fold(0.0, f64::max)
        .max(MIN_SCALE);
    let normalized = cloud.points.iter().map(|p| (p - center) / scale).collect();
    (normalized, NormalizationFrame { center, scale })
}

pub fn denormalize(normalized: &[Vec3], frame: &NormalizationFrame) -> Vec<Vec3> {
    normalized
        .iter()
        .map(|p| p * frame.scale + frame.center)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Full,
    NoInit,
    NoReg,
    #[serde(rename = "NoRS")]
    NoRs,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoInit, Mode::NoReg, Mode::NoRs];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "Full",
            Mode::NoInit => "NoInit",
            Mode::NoReg => "NoReg",
            Mode::NoRs => "NoRS",
        }
    }

    pub fn estimates_motion(self) -> bool {
        self != Mode::NoRs
    }

    pub fn estimates_center(self) -> bool {
        self != Mode::NoReg
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown mode `{s}` (Full, NoInit, NoReg, NoRS)")))
    }
}

/// What to do with an observation whose depth scale collapses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    #[default]
    Raise,
    /// Replace both residual entries by this constant (zero gradient).
    Sentinel(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub mode: Mode,
    /// Compare the analytic gradient with finite differences at the start.
    pub gradient_check: bool,
    pub w_epsilon: f64,
    /// Stop once ε drops by less than this fraction over 100 iterations.
    pub convergence_tol: Option<f64>,
    pub degenerate: DegeneratePolicy,
    /// Run even when the observability pre-check fails.
    pub force: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 5000,
            mode: Mode::Full,
            gradient_check: false,
            w_epsilon: DEFAULT_W_EPSILON,
            convergence_tol: None,
            degenerate: DegeneratePolicy::Raise,
            force: false,
        }
    }
}

impl SolveConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be at least 1".into()));
        }
        if !(self.w_epsilon >= 0.0) {
            return Err(Error::Validation("w_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Free parameters of the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Normalized points, aligned with [`Problem::ids`].
    pub points: Vec<Vec3>,
    pub center: Vec3,
    /// Rotation vector `ω = Ω·a` (rad per unit time).
    pub rotation: Vec3,
    pub velocity: Vec3,
}

impl Params {
    pub fn dim(&self) -> usize {
        3 * self.points.len() + 9
    }

    /// `[p₀ … p_{n−1}, g, ω, v]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for p in &self.points {
            out.extend_from_slice(p.as_slice());
        }
        out.extend_from_slice(self.center.as_slice());
        out.extend_from_slice(self.rotation.as_slice());
        out.extend_from_slice(self.velocity.as_slice());
        out
    }

    pub fn from_slice(x: &[f64]) -> Self {
        assert!(x.len() >= 9 && x.len().is_multiple_of(3));
        let n = (x.len() - 9) / 3;
        let v3 = |k: usize| Vec3::new(x[k], x[k + 1], x[k + 2]);
        Self {
            points: (0..n).map(|i| v3(3 * i)).collect(),
            center: v3(3 * n),
            rotation: v3(3 * n + 3),
            velocity: v3(3 * n + 6),
        }
    }

    pub fn motion(&self) -> MotionState {
        MotionState::from_rotation_vector(&self.rotation, self.velocity, self.center)
    }
}

/// Observations grouped per point, plus the fixed quantities of the cost.
#[derive(Debug, Clone)]
pub struct Problem {
    pub ids: Vec<u32>,
    groups: Vec<Vec<ImagePoint>>,
    pub intrinsics: LightFieldIntrinsics,
    pub scale: f64,
    pub w_epsilon: f64,
    pub degenerate: DegeneratePolicy,
    pub execution: Execution,
}

struct PointTerm {
    cost: f64,
    point: Vec3,
    globals: [f64; 9],
}

impl Problem {
    /// Keeps the observations of the points listed in `ids`.
    pub fn new(obs: &ObservationSet, ids: &[u32], scale: f64) -> Self {
        let groups = ids
            .iter()
            .map(|&id| {
                obs.per_point()
                    .find(|(pid, _)| *pid == id)
                    .map(|(_, r)| r.to_vec())
                    .unwrap_or_default()
            })
            .collect();
        Self {
            ids: ids.to_vec(),
            groups,
            intrinsics: obs.intrinsics,
            scale,
            w_epsilon: DEFAULT_W_EPSILON,
            degenerate: DegeneratePolicy::Raise,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn n_observations(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// `(x̃ − ξx, ỹ − ξy)` per observation, points in id order.
    pub fn residuals(&self, params: &Params) -> Result<Vec<f64>> {
        let blocks = par::map_indexed_with(self.execution, &self.groups, |(i, records)| {
            let mut out = Vec::with_capacity(2 * records.len());
            for r in records {
                let (ex, ey) = self.observation_residual(params, i, r)?;
                out.push(ex);
                out.push(ey);
            }
            Ok(out)
        });
        let mut out = Vec::with_capacity(2 * self.n_observations());
        for block in blocks {
            out.extend(block?);
        }
        Ok(out)
    }

    pub fn cost(&self, params: &Params) -> Result<f64> {
        Ok(self.residuals(params)?.iter().map(|e| e * e).sum())
    }

    fn observation_residual(&self, params: &Params, i: usize, r: &ImagePoint) -> Result<(f64, f64)> {
        let tau_t = self.intrinsics.line_period * r.viewpoint.row as f64;
        let rel = params.points[i] * self.scale;
        let q = params.center + exp_so3(&(params.rotation * tau_t)) * rel + params.velocity * tau_t;
        let k = intrinsic_tensor(&self.intrinsics, &r.viewpoint);
        let h = k.fixed_view::<3, 3>(0, 0) * q + k.column(3);
        if !(h.z.abs() >= self.w_epsilon) {
            return match self.degenerate {
                DegeneratePolicy::Raise => Err(Error::DepthDegenerate { w: h.z }),
                DegeneratePolicy::Sentinel(s) => Ok((s, s)),
            };
        }
        Ok((r.x - h.x / h.z, r.y - h.y / h.z))
    }

    fn point_term(&self, params: &Params, i: usize, records: &[ImagePoint]) -> Result<PointTerm> {
        let rel = params.points[i] * self.scale;
        let mut term = PointTerm {
            cost: 0.0,
            point: Vec3::zeros(),
            globals: [0.0; 9],
        };
        for r in records {
            let tau_t = self.intrinsics.line_period * r.viewpoint.row as f64;
            let theta = params.rotation * tau_t;
            let rot = exp_so3(&theta);
            let q = params.center + rot * rel + params.velocity * tau_t;
            let k = intrinsic_tensor(&self.intrinsics, &r.viewpoint);
            let k3 = k.fixed_view::<3, 3>(0, 0).into_owned();
            let h = k3 * q + k.column(3);
            if !(h.z.abs() >= self.w_epsilon) {
                match self.degenerate {
                    DegeneratePolicy::Raise => return Err(Error::DepthDegenerate { w: h.z }),
                    DegeneratePolicy::Sentinel(s) => {
                        term.cost += 2.0 * s * s;
                        continue;
                    }
                }
            }
            let (x, y) = (h.x / h.z, h.y / h.z);
            let (ex, ey) = (r.x - x, r.y - y);
            term.cost += ex * ex + ey * ey;
            // ∂ε/∂q = −2 (ex ∂x/∂q + ey ∂y/∂q),  ∂x/∂q = (K₀ − x K₂)/w
            let row2 = k3.row(2);
            let dx = (k3.row(0) - row2 * x) / h.z;
            let dy = (k3.row(1) - row2 * y) / h.z;
            let c: Vec3 = ((dx * ex + dy * ey) * -2.0).transpose();

            // q = g + R·λ·ⁿp + v·τt: the whole cloud rides on g
            term.point += rot.transpose() * c * self.scale;
            let dg = c;
            let dw = rotate_jacobian(&theta, &rel).transpose() * c * tau_t;
            let dv = c * tau_t;
            for k in 0..3 {
                term.globals[k] += dg[k];
                term.globals[3 + k] += dw[k];
                term.globals[6 + k] += dv[k];
            }
        }
        Ok(term)
    }

    /// ε and its gradient in the [`Params::to_vec`] layout. Per-point terms
    /// are reduced in id order whatever the execution mode.
    pub fn cost_and_gradient(&self, params: &Params) -> Result<(f64, Vec<f64>)> {
        let terms = par::map_indexed_with(self.execution, &self.groups, |(i, records)| {
            self.point_term(params, i, records)
        });
        let n = params.points.len();
        let mut grad = vec![0.0; params.dim()];
        let mut cost = 0.0;
        let mut globals = [0.0; 9];
        for (i, term) in terms.into_iter().enumerate() {
            let term = term?;
            cost += term.cost;
            grad[3 * i..3 * i + 3].copy_from_slice(term.point.as_slice());
            for (acc, g) in globals.iter_mut().zip(term.globals) {
                *acc += g;
            }
        }
        grad[3 * n..].copy_from_slice(&globals);
        Ok((cost, grad))
    }
}

/// Zeroes the gradient entries a mode keeps frozen.
pub fn mask_gradient(mode: Mode, grad: &mut [f64]) {
    let n3 = grad.len() - 9;
    if !mode.estimates_center() {
        grad[n3..n3 + 3].fill(0.0);
    }
    if !mode.estimates_motion() {
        grad[n3 + 3..].fill(0.0);
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `h` (relative to each coordinate's scale, min 1).
///
/// Each entry is compared relative to `max(|analytic|, |numeric|)`, floored
/// at `1e-6·‖analytic‖∞` so entries that are zero up to rounding do not count.
pub fn gradient_check(problem: &Problem, params: &Params, h: f64) -> Result<f64> {
    let (_, grad) = problem.cost_and_gradient(params)?;
    let x0 = params.to_vec();
    let floor = 1e-6 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for k in 0..x0.len() {
        let step = h * x0[k].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += step;
        xm[k] -= step;
        let fd = (problem.cost(&Params::from_slice(&xp))? - problem.cost(&Params::from_slice(&xm))?)
            / (2.0 * step);
        let denom = grad[k].abs().max(fd.abs()).max(floor);
        if denom > 0.0 {
            worst = worst.max((grad[k] - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Recovered points in the world (row-0 camera) frame.
    pub points: PointCloud,
    pub motion: MotionState,
    pub normalization: NormalizationFrame,
    pub epsilon_trace: Vec<f64>,
    pub final_epsilon: f64,
    pub iterations: usize,
    pub observability: Observability,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_check: Option<f64>,
}

/// Initial parameters and normalization for a mode.
pub fn initial_params(init: &InitReport, mode: Mode) -> (Params, NormalizationFrame) {
    let (normalized, frame) = normalize(&init.points);
    match mode {
        Mode::Full | Mode::NoRs => (
            Params {
                points: normalized,
                center: frame.center,
                rotation: Vec3::zeros(),
                velocity: Vec3::zeros(),
            },
            frame,
        ),
        Mode::NoInit => (
            Params {
                points: vec![Vec3::zeros(); init.points.len()],
                center: frame.center,
                rotation: Vec3::zeros(),
                velocity: Vec3::zeros(),
            },
            frame,
        ),
        Mode::NoReg => (
            Params {
                points: init.points.points.clone(),
                center: Vec3::zeros(),
                rotation: Vec3::zeros(),
                velocity: Vec3::zeros(),
            },
            NormalizationFrame::identity(),
        ),
    }
}

/// Runs the refinement from a linear initialization.
pub fn solve(obs: &ObservationSet, init: &InitReport, cfg: &SolveConfig) -> Result<SolveReport> {
    solve_with(obs, init, cfg, Execution::default())
}

pub fn solve_with(
    obs: &ObservationSet,
    init: &InitReport,
    cfg: &SolveConfig,
    execution: Execution,
) -> Result<SolveReport> {
    cfg.validate()?;
    if init.points.is_empty() {
        return Err(Error::AllPointsSkipped);
    }
    let observability = check_observability(obs, Some(&init.points));
    if !observability.observable && !cfg.force {
        return Err(Error::NotObservable(observability.reasons.join("; ")));
    }

    let (mut params, frame) = initial_params(init, cfg.mode);
    let mut problem = Problem::new(obs, &init.points.ids, frame.scale).with_execution(execution);
    problem.w_epsilon = cfg.w_epsilon;
    problem.degenerate = cfg.degenerate;

    let grad_check = if cfg.gradient_check {
        Some(gradient_check(&problem, &params, 1e-6)?)
    } else {
        None
    };

    let adam = AdamParams {
        learning_rate: cfg.learning_rate,
        ..AdamParams::default()
    };
    let mut x = params.to_vec();
    let mut opt = Adam::new(adam, x.len());
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        let (cost, mut grad) = problem.cost_and_gradient(&params)?;
        if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration: it });
        }
        trace.push(cost);
        if let Some(tol) = cfg.convergence_tol {
            if it >= 100 && it % 100 == 0 {
                let before = trace[it - 100];
                if before > 0.0 && (before - cost) / before < tol {
                    break;
                }
            }
        }
        mask_gradient(cfg.mode, &mut grad);
        opt.step(&mut x, &grad);
        params = Params::from_slice(&x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: it });
        }
    }
    let final_epsilon = problem.cost(&params)?;
    if !final_epsilon.is_finite() {
        return Err(Error::NonFinite {
            iteration: opt.steps_taken() as usize,
        });
    }
    trace.push(final_epsilon);

    let solved_frame = NormalizationFrame {
        center: params.center,
        scale: frame.scale,
    };
    let points = PointCloud::new(init.points.ids.clone(), denormalize(&params.points, &solved_frame));
    Ok(SolveReport {
        points,
        motion: params.motion(),
        normalization: frame,
        epsilon_trace: trace,
        final_epsilon,
        iterations: opt.steps_taken() as usize,
        observability,
        mode: cfg.mode,
        gradient_check: grad_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::triangulate_horizontal;
    use crate::sim::{default_rig, scene_motion, simulate, MotionScenario, Scene};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_pair() {
        let cloud = PointCloud::from_points(vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)]);
        let (n, frame) = normalize(&cloud);
        assert_eq!(frame.center, Vec3::zeros());
        assert_eq!(frame.scale, 1.0);
        assert_eq!(n, cloud.points);
    }

    #[test]
    fn single_point_clamps_scale() {
        let cloud = PointCloud::from_points(vec![Vector3::new(0.3, -2.0, 7.0)]);
        let (n, frame) = normalize(&cloud);
        assert_eq!(frame.center, cloud.points[0]);
        assert_eq!(frame.scale, MIN_SCALE);
        assert_eq!(n[0], Vec3::zeros());
    }

    #[test]
    fn normalization_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = PointCloud::from_points(
            (0..30)
                .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(5.0..9.0)))
                .collect(),
        );
        let (n, frame) = normalize(&cloud);
        assert!(n.iter().all(|p| p.amax() <= 1.0));
        for (a, b) in denormalize(&n, &frame).iter().zip(&cloud.points) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }

    fn fixture(id: u8) -> (Scene, ObservationSet, MotionState) {
        let scene = Scene::random_box("s", 12, 7.0, Vector3::new(1.0, 1.0, 0.5), 21);
        let sc = MotionScenario::benchmark(id).unwrap();
        let obs = simulate(&scene, &sc, &default_rig(), 0.0, 0).unwrap();
        let motion = scene_motion(&scene, &sc);
        (scene, obs, motion)
    }

    fn truth_params(scene: &Scene, motion: &MotionState, frame: &NormalizationFrame) -> Params {
        Params {
            points: scene.points.iter().map(|p| (p - motion.center) / frame.scale).collect(),
            center: motion.center,
            rotation: motion.rotation_vector(),
            velocity: motion.linear_velocity,
        }
    }

    #[test]
    fn ground_truth_has_zero_residual_and_gradient() {
        let (scene, obs, motion) = fixture(9);
        let (_, frame) = normalize(&scene.cloud());
        let params = truth_params(&scene, &motion, &frame);
        let problem = Problem::new(&obs, &obs.point_ids(), frame.scale);
        let res = problem.residuals(&params).unwrap();
        assert_eq!(res.len(), 2 * obs.len());
        assert!(res.iter().all(|e| e.abs() <= 1e-10));
        let (_, grad) = problem.cost_and_gradient(&params).unwrap();
        assert!(grad.iter().all(|g| g.abs() <= 1e-10), "{grad:?}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in [1, 4, 9] {
            let (scene, obs, motion) = fixture(id);
            let (_, frame) = normalize(&scene.cloud());
            let mut params = truth_params(&scene, &motion, &frame);
            for p in params.points.iter_mut() {
                *p += Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            }
            params.center += Vector3::new(0.05, -0.03, 0.2);
            params.rotation = params.rotation * 0.8 + Vector3::new(0.02, -0.01, 0.03);
            params.velocity += Vector3::new(0.01, 0.02, -0.03);
            let problem = Problem::new(&obs, &obs.point_ids(), frame.scale);
            let worst = gradient_check(&problem, &params, 1e-6).unwrap();
            assert!(worst < 1e-4, "scenario {id}: {worst:e}");
        }
    }

    #[test]
    fn frozen_motion_on_static_data() {
        let (scene, obs, _) = fixture(0);
        let problem = Problem::new(&obs, &obs.point_ids(), 1.0);
        let params = Params {
            points: scene.points.clone(),
            center: Vec3::zeros(),
            rotation: Vec3::zeros(),
            velocity: Vec3::zeros(),
        };
        assert!(problem.residuals(&params).unwrap().iter().all(|e| e.abs() <= 1e-10));
    }

    #[test]
    fn frozen_entries_are_masked() {
        let mut g = vec![1.0; 3 * 4 + 9];
        mask_gradient(Mode::NoRs, &mut g);
        assert!(g[12..15].iter().all(|&v| v == 1.0));
        assert!(g[15..].iter().all(|&v| v == 0.0));
        let mut g = vec![1.0; 3 * 4 + 9];
        mask_gradient(Mode::NoReg, &mut g);
        assert!(g[12..15].iter().all(|&v| v == 0.0));
        assert!(g[15..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unregularized_cost_is_plain_reprojection_error() {
        // with g = 0 and λ_n = 1 the cost is the sum over raw world points
        let (scene, obs, motion) = fixture(4);
        let about_origin = MotionState {
            center: Vec3::zeros(),
            ..motion
        };
        let problem = Problem::new(&obs, &obs.point_ids(), 1.0);
        let params = Params {
            points: scene.points.clone(),
            center: Vec3::zeros(),
            rotation: about_origin.rotation_vector(),
            velocity: about_origin.linear_velocity,
        };
        let mut direct = 0.0;
        for r in &obs.records {
            let (x, y) = crate::geometry::project_point(
                &scene.points[r.point_id as usize],
                &crate::geometry::CameraPose::identity(),
                &about_origin,
                &obs.intrinsics,
                &r.viewpoint,
            )
            .unwrap();
            direct += (r.x - x).powi(2) + (r.y - y).powi(2);
        }
        let eps = problem.cost(&params).unwrap();
        assert!((eps - direct).abs() <= 1e-12 * direct, "{eps:e} vs {direct:e}");
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let (scene, obs, motion) = fixture(6);
        let (_, frame) = normalize(&scene.cloud());
        let mut params = truth_params(&scene, &motion, &frame);
        params.rotation *= 0.9;
        let seq = Problem::new(&obs, &obs.point_ids(), frame.scale).with_execution(Execution::Sequential);
        let par = Problem::new(&obs, &obs.point_ids(), frame.scale).with_execution(Execution::Parallel);
        assert_eq!(seq.cost_and_gradient(&params).unwrap(), par.cost_and_gradient(&params).unwrap());
    }

    #[test]
    fn sentinel_policy_replaces_degenerate_residuals() {
        let (_, obs, _) = fixture(0);
        let mut problem = Problem::new(&obs, &obs.point_ids(), 1.0);
        // every point on the w = 0 plane (z = 0.3 m)
        let params = Params {
            points: vec![Vector3::new(0.1, 0.1, 0.3); obs.point_ids().len()],
            center: Vec3::zeros(),
            rotation: Vec3::zeros(),
            velocity: Vec3::zeros(),
        };
        assert!(matches!(problem.residuals(&params), Err(Error::DepthDegenerate { .. })));
        problem.degenerate = DegeneratePolicy::Sentinel(1.0);
        let res = problem.residuals(&params).unwrap();
        assert!(res.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn refuses_unobservable_input() {
        let (_, obs, _) = fixture(2);
        let obs = obs.filtered(|r| r.viewpoint.row == 3);
        let init = triangulate_horizontal(&obs).unwrap();
        let err = solve(&obs, &init, &SolveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotObservable(_)));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SolveConfig = serde_json::from_str(r#"{"mode": "NoRS", "iterations": 10}"#).unwrap();
        assert_eq!(cfg.mode, Mode::NoRs);
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.learning_rate, 0.01);
        assert!(SolveConfig { iterations: 0, ..cfg.clone() }.validate().is_err());
        assert!(SolveConfig { learning_rate: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn static_scene_with_frozen_motion_stays_put() {
        let (scene, obs, _) = fixture(0);
        let init = triangulate_horizontal(&obs).unwrap();
        let cfg = SolveConfig {
            iterations: 200,
            ..SolveConfig::with_mode(Mode::NoRs)
        };
        let rep = solve(&obs, &init, &cfg).unwrap();
        assert_eq!(rep.motion.angular_speed, 0.0);
        assert_eq!(rep.motion.linear_velocity, Vec3::zeros());
        for (id, p) in rep.points.iter() {
            let gt = scene.points[id as usize];
            assert!((p.z - gt.z).abs() / gt.z < 1e-4);
        }
        assert_eq!(rep.epsilon_trace.len(), 201);
        assert_eq!(rep.final_epsilon, *rep.epsilon_trace.last().unwrap());
    }
}
