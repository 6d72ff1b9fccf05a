//! Decoupled refinement loop: Adam on rotation and log-depth, SGD with
//! momentum on the lateral offset, each scaled by its own step schedule.

use std::fmt;

use log::{debug, warn};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseDelta};
use crate::objective::{Objective, ObjectiveConfig, Scene};

pub const DEFAULT_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_step: f64,
}

impl AdamState {
    pub fn new(dim: usize, base_step: f64, betas: (f64, f64), epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: betas.0,
            beta2: betas.1,
            epsilon,
            base_step,
        }
    }
}

/// One bias-corrected Adam step; returns the parameter increment.
pub fn adam_step(state: &mut AdamState, grad: &[f64], multiplier: f64) -> Vec<f64> {
    assert_eq!(grad.len(), state.m.len(), "gradient dimension mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let lr = state.base_step * multiplier;
    grad.iter()
        .enumerate()
        .map(|(i, &g)| {
            state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
            state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            -lr * m_hat / (v_hat.sqrt() + state.epsilon)
        })
        .collect()
}

/// Heavy-ball SGD: `buf ← μ·buf + g`, increment `−step·multiplier·buf`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdMomentum {
    pub buf: Vec<f64>,
    pub momentum: f64,
    pub base_step: f64,
}

impl SgdMomentum {
    pub fn new(dim: usize, base_step: f64, momentum: f64) -> Self {
        SgdMomentum {
            buf: vec![0.0; dim],
            momentum,
            base_step,
        }
    }

    pub fn step(&mut self, grad: &[f64], multiplier: f64) -> Vec<f64> {
        assert_eq!(grad.len(), self.buf.len(), "gradient dimension mismatch");
        let lr = self.base_step * multiplier;
        self.buf
            .iter_mut()
            .zip(grad)
            .map(|(b, &g)| {
                *b = self.momentum * *b + g;
                -lr * *b
            })
            .collect()
    }
}

/// Piecewise-linear step multiplier over iterations, constant beyond the
/// first and last breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    /// `(iteration, multiplier)` pairs with increasing iteration.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule {
            breakpoints: vec![(0.0, value)],
        }
    }

    /// 1.0 until iteration 39, then exponential decay to 0.05 at 99.
    pub fn default_rotation() -> Self {
        let mut breakpoints = vec![(0.0, 1.0)];
        for i in 39..=99 {
            let x = (i - 39) as f64 / 60.0;
            breakpoints.push((i as f64, 0.05f64.powf(x)));
        }
        Schedule { breakpoints }
    }

    /// Low until 34, ramp to 1.0 by 59, hold to 84, decay to 0.3 at 99.
    pub fn default_depth() -> Self {
        Schedule {
            breakpoints: vec![(0.0, 0.05), (34.0, 0.05), (59.0, 1.0), (84.0, 1.0), (99.0, 0.3)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(Error::Config("schedule needs at least one breakpoint".into()));
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "schedule breakpoints must have increasing iterations, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if self
            .breakpoints
            .iter()
            .any(|&(i, m)| !i.is_finite() || !m.is_finite() || m < 0.0)
        {
            return Err(Error::Config("schedule values must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn at(&self, iteration: usize) -> f64 {
        let x = iteration as f64;
        let bp = &self.breakpoints;
        let (first, last) = (bp[0], bp[bp.len() - 1]);
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let k = bp.partition_point(|&(i, _)| i <= x);
        let (a, b) = (bp[k - 1], bp[k]);
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedules {
    pub rotation: Schedule,
    pub lateral: Schedule,
    pub depth: Schedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            rotation: Schedule::default_rotation(),
            lateral: Schedule::constant(1.0),
            depth: Schedule::default_depth(),
        }
    }
}

impl Schedules {
    pub fn at(&self, iteration: usize) -> [f64; 3] {
        [
            self.rotation.at(iteration),
            self.lateral.at(iteration),
            self.depth.at(iteration),
        ]
    }
}

/// How the winning symmetry branch and its pose are picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSelection {
    /// Compare the exact objective at each branch's final iterate.
    #[default]
    FinalIterate,
    /// Take each branch's lowest recorded objective (probe means count),
    /// returning the pose of that iterate.
    BestOverTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub iterations: usize,
    pub schedules: Schedules,
    pub rotation_step: f64,
    pub lateral_step: f64,
    pub depth_step: f64,
    pub rotation_betas: (f64, f64),
    pub depth_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub lateral_momentum: f64,
    pub objective: ObjectiveConfig,
    /// Spend one extra evaluation for an exact objective at the start point.
    pub trace_initial: bool,
    pub branch_selection: BranchSelection,
    /// Seed handed to stochastic critics.
    pub seed: u64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            iterations: DEFAULT_ITERATIONS,
            schedules: Schedules::default(),
            rotation_step: 0.04,
            lateral_step: 1.0,
            depth_step: 0.01,
            rotation_betas: (0.6, 0.9),
            depth_betas: (0.4, 0.9),
            adam_epsilon: 1e-8,
            lateral_momentum: 0.5,
            objective: ObjectiveConfig::default(),
            trace_initial: false,
            branch_selection: BranchSelection::FinalIterate,
            seed: 0,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedules.rotation.validate()?;
        self.schedules.lateral.validate()?;
        self.schedules.depth.validate()?;
        let steps = [self.rotation_step, self.lateral_step, self.depth_step];
        if steps.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("base steps must be finite and nonnegative".into()));
        }
        for (b1, b2) in [self.rotation_betas, self.depth_betas] {
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
                return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
            }
        }
        if !(self.adam_epsilon > 0.0) || !(0.0..1.0).contains(&self.lateral_momentum) {
            return Err(Error::Config("invalid epsilon or momentum".into()));
        }
        let fd = self.objective.fd_steps.per_parameter();
        if fd.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Config("finite-difference steps must be positive".into()));
        }
        if self.objective.render_resolution == 0
            || self.objective.render_resolution > self.objective.patch_resolution
        {
            return Err(Error::Config(
                "render resolution must be in 1..=patch resolution".into(),
            ));
        }
        Ok(())
    }

    /// Critic evaluations spent by one branch.
    pub fn evaluations_per_branch(&self) -> u64 {
        self.iterations as u64 * 12 + 1 + u64::from(self.trace_initial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta: PoseDelta,
    pub pose: Pose,
    /// Objective at `delta`; the mean of the gradient probes unless `exact`.
    pub objective: Option<f64>,
    pub exact: bool,
    /// Rotation, lateral, depth multipliers applied at this iteration.
    pub multipliers: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub branch: usize,
    #[serde(with = "matrix_rows")]
    pub symmetry: Matrix3<f64>,
    pub records: Vec<IterationRecord>,
    pub final_pose: Option<Pose>,
    pub final_objective: Option<f64>,
    pub eval_count: u64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub pose: Pose,
    pub objective: f64,
    pub trace: RefinementTrace,
}

/// Failure inside a refinement run, with everything recorded up to it.
#[derive(Debug)]
pub struct RefineError {
    pub error: Error,
    pub trace: RefinementTrace,
}

impl fmt::Display for RefineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "refinement branch {} failed after {} iterations: {}",
            self.trace.branch,
            self.trace.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RefineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RefineError> for Error {
    fn from(e: RefineError) -> Self {
        e.error
    }
}

/// Refines `proposal` against `scene`.
pub fn refine(
    scene: &Scene<'_>,
    proposal: &Pose,
    cfg: &RefinementConfig,
) -> std::result::Result<RefineOutcome, RefineError> {
    refine_branch(scene, proposal, cfg, 0, Matrix3::identity())
}

fn refine_branch(
    scene: &Scene<'_>,
    proposal: &Pose,
    cfg: &RefinementConfig,
    branch: usize,
    symmetry: Matrix3<f64>,
) -> std::result::Result<RefineOutcome, RefineError> {
    let mut trace = RefinementTrace {
        branch,
        symmetry,
        records: Vec::with_capacity(cfg.iterations + 1),
        final_pose: None,
        final_objective: None,
        eval_count: 0,
    };
    if let Err(error) = cfg.validate() {
        return Err(RefineError { error, trace });
    }
    let obj = match Objective::new(scene, proposal, cfg.objective) {
        Ok(o) => o,
        Err(error) => return Err(RefineError { error, trace }),
    };
    match run_loop(&obj, cfg, &mut trace) {
        Ok((pose, objective)) => {
            trace.eval_count = obj.eval_count();
            trace.final_pose = Some(pose.clone());
            trace.final_objective = Some(objective);
            Ok(RefineOutcome {
                pose,
                objective,
                trace,
            })
        }
        Err(error) => {
            trace.eval_count = obj.eval_count();
            Err(RefineError { error, trace })
        }
    }
}

fn run_loop(obj: &Objective<'_, '_>, cfg: &RefinementConfig, trace: &mut RefinementTrace) -> Result<(Pose, f64)> {
    let mut rot = AdamState::new(3, cfg.rotation_step, cfg.rotation_betas, cfg.adam_epsilon);
    let mut depth = AdamState::new(1, cfg.depth_step, cfg.depth_betas, cfg.adam_epsilon);
    let mut lateral = SgdMomentum::new(2, cfg.lateral_step, cfg.lateral_momentum);
    let mut delta = PoseDelta::zero();

    let initial = if cfg.trace_initial {
        Some(obj.evaluate(&delta)?)
    } else {
        None
    };

    for it in 0..cfg.iterations {
        let pose = obj.pose_at(&delta)?;
        let g = obj.numeric_gradient(&delta)?;
        let mult = cfg.schedules.at(it);
        let (objective, exact) = match (it, initial) {
            (0, Some(j)) => (j, true),
            _ => (g.probe_mean, false),
        };
        trace.records.push(IterationRecord {
            iteration: it,
            delta,
            pose,
            objective: Some(objective),
            exact,
            multipliers: mult,
        });
        if g.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite gradient at iteration {it}: {:?}",
                g.grad
            )));
        }
        let dr = adam_step(&mut rot, &g.grad[0..3], mult[0]);
        let dl = lateral.step(&g.grad[3..5], mult[1]);
        let dd = adam_step(&mut depth, &g.grad[5..6], mult[2]);
        delta.theta_r += nalgebra::Vector3::new(dr[0], dr[1], dr[2]);
        delta.theta_l += nalgebra::Vector2::new(dl[0], dl[1]);
        delta.theta_d += dd[0];
        debug!("iteration {it}: J≈{objective:.4} grad={:?}", g.grad);
    }

    let pose = obj.pose_at(&delta)?;
    let j = obj.evaluate(&delta)?;
    trace.records.push(IterationRecord {
        iteration: cfg.iterations,
        delta,
        pose: pose.clone(),
        objective: Some(j),
        exact: true,
        multipliers: cfg.schedules.at(cfg.iterations),
    });
    Ok((pose, j))
}

#[derive(Clone, Debug)]
pub struct SymmetricOutcome {
    pub pose: Pose,
    pub objective: f64,
    pub branch: usize,
    /// One entry per symmetry, in input order.
    pub branches: Vec<std::result::Result<RefineOutcome, RefineErrorSummary>>,
}

/// Cloneable record of a failed branch.
#[derive(Clone, Debug)]
pub struct RefineErrorSummary {
    pub message: String,
    pub trace: RefinementTrace,
}

/// Refines one branch per object-frame symmetry (the proposal's rotation
/// right-multiplied by each) and keeps the branch with the lowest objective.
/// Ties go to the earliest branch.
pub fn refine_with_symmetries(
    scene: &Scene<'_>,
    proposal: &Pose,
    symmetries: &[Matrix3<f64>],
    cfg: &RefinementConfig,
) -> std::result::Result<SymmetricOutcome, RefineError> {
    let identity_only = [Matrix3::identity()];
    let symmetries = if symmetries.is_empty() {
        &identity_only[..]
    } else {
        symmetries
    };
    let results: Vec<_> = symmetries
        .par_iter()
        .enumerate()
        .map(|(k, s)| refine_branch(scene, &proposal.with_object_rotation(s), cfg, k, *s))
        .collect();

    let mut best: Option<(usize, f64, Pose)> = None;
    let mut first_error = None;
    let mut branches = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(outcome) => {
                let (score, pose) = match cfg.branch_selection {
                    BranchSelection::FinalIterate => (outcome.objective, outcome.pose.clone()),
                    BranchSelection::BestOverTrace => best_record(&outcome),
                };
                if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
                    best = Some((k, score, pose));
                }
                branches.push(Ok(outcome));
            }
            Err(e) => {
                warn!("{e}");
                branches.push(Err(RefineErrorSummary {
                    message: e.error.to_string(),
                    trace: e.trace.clone(),
                }));
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match best {
        Some((branch, objective, pose)) => Ok(SymmetricOutcome {
            pose,
            objective,
            branch,
            branches,
        }),
        None => Err(first_error.expect("at least one branch ran")),
    }
}

fn best_record(outcome: &RefineOutcome) -> (f64, Pose) {
    let mut best = (outcome.objective, outcome.pose.clone());
    for r in &outcome.trace.records {
        if let Some(j) = r.objective {
            if j < best.0 {
                best = (j, r.pose.clone());
            }
        }
    }
    best
}

mod matrix_rows {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::critic::{GroundTruth, OracleCritic};
    use crate::geometry::{rotation_angle_between, so3_exp};
    use crate::image::RgbImage;
    use crate::model::{model_points, primitives, TriangleMesh};
    use crate::objective::test_support::PolynomialCritic;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_first_step_is_sign_of_gradient() {
        for g in [3.7, -0.002, 150.0] {
            let mut s = AdamState::new(1, 0.04, (0.6, 0.9), 1e-8);
            let u = adam_step(&mut s, &[g], 0.5);
            assert_relative_eq!(u[0], -0.02 * g.signum(), max_relative = 1e-5);
        }
    }

    #[test]
    fn adam_zero_gradient_is_no_op() {
        let mut s = AdamState::new(3, 0.04, (0.6, 0.9), 1e-8);
        assert_eq!(adam_step(&mut s, &[0.0; 3], 1.0), vec![0.0; 3]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_two_steps_by_hand() {
        let mut s = AdamState::new(1, 0.1, (0.6, 0.9), 1e-8);
        adam_step(&mut s, &[2.0], 1.0);
        let u = adam_step(&mut s, &[2.0], 1.0);
        // m = 0.6*0.8 + 0.4*2 = 1.28, v = 0.9*0.4 + 0.1*4 = 0.76
        let m_hat: f64 = 1.28 / (1.0 - 0.36);
        let v_hat: f64 = 0.76 / (1.0 - 0.81);
        assert_relative_eq!(u[0], -0.1 * m_hat / (v_hat.sqrt() + 1e-8), max_relative = 1e-12);
        assert_relative_eq!(u[0], -0.1, max_relative = 1e-6);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut s = SgdMomentum::new(1, 1.0, 0.5);
        assert_eq!(s.step(&[2.0], 1.0), vec![-2.0]);
        assert_eq!(s.step(&[2.0], 0.5), vec![-1.5]);
    }

    #[test]
    fn default_schedules_have_documented_shape() {
        let s = Schedules::default();
        for i in 0..100 {
            let m = s.at(i);
            assert_eq!(m[1], 1.0);
            if i > 0 {
                assert!(m[0] <= s.at(i - 1)[0]);
            }
            if (1..=59).contains(&i) {
                assert!(m[2] >= s.at(i - 1)[2]);
            }
            if i > 84 {
                assert!(m[2] <= s.at(i - 1)[2]);
            }
        }
        assert_eq!(s.at(39)[0], 1.0);
        assert_relative_eq!(s.at(99)[0], 0.05, max_relative = 1e-12);
        assert_relative_eq!(s.at(69)[0], 0.05f64.sqrt(), max_relative = 1e-12);
        assert_eq!(s.at(20)[2], 0.05);
        assert_eq!(s.at(70)[2], 1.0);
        assert_relative_eq!(s.at(99)[2], 0.3, max_relative = 1e-12);
        assert_relative_eq!(s.at(46)[2], 0.05 + 0.95 * 12.0 / 25.0, max_relative = 1e-12);
    }

    #[test]
    fn schedule_rejects_bad_breakpoints() {
        let s = Schedule {
            breakpoints: vec![(5.0, 1.0), (2.0, 0.5)],
        };
        assert!(s.validate().is_err());
        assert!(Schedule::constant(-1.0).validate().is_err());
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = RefinementConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RefinementConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: RefinementConfig = serde_json::from_str(r#"{"iterations": 7}"#).unwrap();
        assert_eq!(partial.iterations, 7);
        assert_eq!(partial.rotation_step, 0.04);
        assert_eq!(cfg.evaluations_per_branch(), 1201);
    }

    struct Fixture {
        image: RgbImage,
        mesh: TriangleMesh,
        truth: Pose,
    }

    impl Fixture {
        fn new(mesh: TriangleMesh) -> Self {
            Fixture {
                image: RgbImage::new(640, 480),
                mesh,
                truth: Pose::from_axis_angle(Vector3::new(0.4, 0.2, -0.3), Vector3::new(0.01, -0.02, 1.0))
                    .unwrap(),
            }
        }

        fn scene<'a>(&'a self, critic: &'a dyn crate::critic::Critic) -> Scene<'a> {
            Scene {
                observed: &self.image,
                mesh: &self.mesh,
                intrinsics: CameraIntrinsics::linemod(),
                shading: Default::default(),
                critic,
                truth: Some(GroundTruth {
                    pose: self.truth.clone(),
                    points: model_points(&self.mesh, 2000),
                }),
            }
        }
    }

    fn fast_cfg() -> RefinementConfig {
        RefinementConfig {
            objective: ObjectiveConfig {
                render_resolution: 16,
                patch_resolution: 512,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn stays_at_the_optimum() {
        let fx = Fixture::new(primitives::cuboid(0.1, 0.1, 0.1));
        let scene = fx.scene(&OracleCritic);
        let out = refine(&scene, &fx.truth, &fast_cfg()).unwrap();
        let d = out.trace.records.last().unwrap().delta;
        assert!(d.theta_r.norm() < 1e-3, "{d:?}");
        assert!(d.theta_l.norm() < 0.5, "{d:?}");
        assert!(d.theta_d.abs() < 1e-3, "{d:?}");
        assert_eq!(out.trace.records.len(), 101);
        assert_eq!(out.trace.eval_count, 1201);
    }

    #[test]
    fn recovers_ten_degree_rotation() {
        let fx = Fixture::new(primitives::cuboid(0.1, 0.1, 0.1));
        let scene = fx.scene(&OracleCritic);
        let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
        let start = Pose::new(
            fx.truth.rotation * so3_exp(&(axis * 10f64.to_radians())).unwrap(),
            fx.truth.translation,
        );
        let out = refine(&scene, &start, &fast_cfg()).unwrap();
        let err = rotation_angle_between(&out.pose, &fx.truth);
        assert!(err < 1.0, "final rotation error {err}°");
    }

    #[test]
    fn traced_initial_point_costs_one_evaluation() {
        let fx = Fixture::new(primitives::cuboid(0.1, 0.1, 0.1));
        let scene = fx.scene(&OracleCritic);
        let cfg = RefinementConfig {
            iterations: 3,
            trace_initial: true,
            ..fast_cfg()
        };
        let out = refine(&scene, &fx.truth, &cfg).unwrap();
        assert_eq!(out.trace.eval_count, 3 * 12 + 2);
        assert!(out.trace.records[0].exact);
        assert_eq!(out.trace.records[0].objective, Some(0.0));
    }

    #[test]
    fn quadratic_critic_decreases_after_warmup() {
        let fx = Fixture::new(primitives::cuboid(0.1, 0.1, 0.1));
        let critic = PolynomialCritic {
            weights: [1.0, 1.0, 1.0, 0.01, 0.01, 10.0],
            cross: 0.0,
            cubic: 0.0,
        };
        let scene = Scene {
            truth: None,
            ..fx.scene(&critic)
        };
        let mut good = 0;
        let runs = 20;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // start away from the minimum by moving the reference frame:
            // the critic reads the delta, so offset it through the proposal
            let offset: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let shifted = ShiftedCritic {
                inner: &critic,
                offset: [
                    offset[0] * 0.5,
                    offset[1] * 0.5,
                    offset[2] * 0.5,
                    offset[3] * 20.0,
                    offset[4] * 20.0,
                    offset[5] * 0.1,
                ],
            };
            let scene = Scene {
                critic: &shifted,
                ..scene_ref(&scene)
            };
            let cfg = RefinementConfig {
                objective: ObjectiveConfig {
                    render_resolution: 8,
                    patch_resolution: 16,
                    ..Default::default()
                },
                ..Default::default()
            };
            let out = refine(&scene, &fx.truth, &cfg).unwrap();
            let j: Vec<f64> = out.trace.records.iter().map(|r| r.objective.unwrap()).collect();
            let j5 = j[5];
            if j[6..].iter().all(|&v| v <= j5) && *j.last().unwrap() < 0.05 * j5 {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.95 * runs as f64, "{good}/{runs}");
    }

    fn scene_ref<'a>(s: &Scene<'a>) -> Scene<'a> {
        Scene {
            observed: s.observed,
            mesh: s.mesh,
            intrinsics: s.intrinsics,
            shading: s.shading,
            critic: s.critic,
            truth: s.truth.clone(),
        }
    }

    struct ShiftedCritic<'a> {
        inner: &'a PolynomialCritic,
        offset: [f64; 6],
    }

    impl crate::critic::Critic for ShiftedCritic<'_> {
        fn evaluate(&self, req: &crate::critic::CriticRequest<'_>) -> Result<f64> {
            let d = req.context.delta.to_array();
            Ok(self.inner.value(&std::array::from_fn(|i| d[i] - self.offset[i])))
        }

        fn name(&self) -> &str {
            "shifted"
        }
    }

    #[test]
    fn identity_symmetry_matches_plain_refine() {
        let fx = Fixture::new(primitives::wedge(0.16));
        let scene = fx.scene(&OracleCritic);
        let start = Pose::new(fx.truth.rotation, fx.truth.translation + Vector3::new(0.01, 0.0, 0.02));
        let cfg = RefinementConfig {
            iterations: 10,
            ..fast_cfg()
        };
        let plain = refine(&scene, &start, &cfg).unwrap();
        let sym = refine_with_symmetries(&scene, &start, &[Matrix3::identity()], &cfg).unwrap();
        assert_eq!(plain.pose, sym.pose);
        assert_eq!(sym.branch, 0);
    }

    #[test]
    fn branch_starting_at_truth_wins() {
        let fx = Fixture::new(primitives::wedge(0.16));
        let scene = fx.scene(&OracleCritic);
        let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0));
        // proposal·flip = truth, so the second branch starts at the optimum
        let start = fx.truth.with_object_rotation(&flip);
        let cfg = RefinementConfig {
            iterations: 0,
            ..fast_cfg()
        };
        let out = refine_with_symmetries(&scene, &start, &[Matrix3::identity(), flip], &cfg).unwrap();
        assert_eq!(out.branch, 1);
        assert_eq!(out.objective, 0.0);
        assert_eq!(out.branches.len(), 2);
    }

    #[test]
    fn failure_keeps_partial_trace() {
        struct Failing;
        impl crate::critic::Critic for Failing {
            fn evaluate(&self, req: &crate::critic::CriticRequest<'_>) -> Result<f64> {
                if req.context.delta.theta_l.x > 3.0 {
                    Err(Error::CriticProtocol("boom".into()))
                } else {
                    Ok(-req.context.delta.theta_l.x)
                }
            }
            fn name(&self) -> &str {
                "failing"
            }
        }
        let fx = Fixture::new(primitives::cuboid(0.1, 0.1, 0.1));
        let scene = fx.scene(&Failing);
        let err = refine(&scene, &fx.truth, &fast_cfg()).unwrap_err();
        assert!(matches!(err.error, Error::CriticProtocol(_)));
        assert!(!err.trace.records.is_empty());
        assert!(err.trace.final_pose.is_none());
    }

    #[test]
    fn refinement_is_deterministic() {
        let fx = Fixture::new(primitives::l_block(0.15));
        let scene = fx.scene(&OracleCritic);
        let start = Pose::new(
            fx.truth.rotation * so3_exp(&Vector3::new(0.1, 0.05, 0.0)).unwrap(),
            fx.truth.translation + Vector3::new(0.005, 0.0, 0.03),
        );
        let cfg = RefinementConfig {
            iterations: 15,
            ..fast_cfg()
        };
        let a = refine(&scene, &start, &cfg).unwrap();
        let b = refine(&scene, &start, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}
