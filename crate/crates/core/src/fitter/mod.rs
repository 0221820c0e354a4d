//! Staged gradient-based recovery of shape, pose, expression and the three
//! crop cameras from 2D keypoints, landmarks and priors.
//!
//! The optimizer is Adam with a backtracking guard: a step is accepted only
//! if it does not raise the objective by more than [`ACCEPT_TOL`], otherwise
//! it is halved up to `max_halvings` times and finally skipped.

mod objective;
mod render;


use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body_model::{pose_model, BodyModel, JointRotation, ParamLayout, Parameters, Vec3};
use crate::camera::{project, WeakPerspectiveCamera};
use crate::error::{check_len, Error, Result};
use crate::losses::{Image, LandmarkSet, LossBreakdown, LossWeights};
use crate::optim::{Adam, AdamConfig};
use crate::prior::{GaussianClass, Gender, GenderPrior};
use crate::rotations::{axis_angle_to_matrix, matrix_to_rot6d, EulerXYZ};

pub use objective::{objective, Evaluation};
use objective::evaluate;
pub use render::{Embedder, LinearEmbedder, Renderer, SplatRenderer};

/// Scalars per camera: `s, tx, ty`.
pub const CAMERA_PARAMS: usize = 9;
/// Largest objective increase an accepted step may cause.
pub const ACCEPT_TOL: f64 = 1e-9;

/// 2D keypoints in crop pixels with per-point visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2d {
    pub points: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl Keypoints2d {
    pub fn all_visible(points: Vec<[f64; 2]>) -> Self {
        let visibility = vec![true; points.len()];
        Keypoints2d { points, visibility }
    }

    fn validate(&self, context: &'static str, expected: usize) -> Result<()> {
        check_len(context, expected, self.points.len())?;
        check_len(context, expected, self.visibility.len())?;
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteComponent(context.into()));
        }
        Ok(())
    }
}

/// Everything observed about one subject.
///
/// Body joints follow `roles.body_joints`; hand joints are the left hand
/// joints followed by the right ones; landmarks follow `landmark_indices`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_joints_2d: Option<Keypoints2d>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_joints_3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_joints_2d: Option<Keypoints2d>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_landmarks: Option<LandmarkSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
}

impl Observations {
    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        let roles = &model.roles;
        let n_hand = roles.left_hand_joints.len() + roles.right_hand_joints.len();
        if let Some(k) = &self.body_joints_2d {
            k.validate("body joints 2D", roles.body_joints.len())?;
        }
        if let Some(j) = &self.body_joints_3d {
            check_len("body joints 3D", roles.body_joints.len(), j.len())?;
        }
        if let Some(k) = &self.hand_joints_2d {
            k.validate("hand joints 2D", n_hand)?;
        }
        if let Some(l) = &self.face_landmarks {
            l.validate()?;
            check_len("model landmarks", l.points.len(), model.landmark_indices.len())?;
        }
        let any = self.body_joints_2d.is_some()
            || self.body_joints_3d.is_some()
            || self.hand_joints_2d.is_some()
            || self.face_landmarks.is_some();
        if !any {
            return Err(Error::DegenerateInput("no observations".into()));
        }
        Ok(())
    }
}

/// Target image plus the providers that render and embed the model.
pub struct Photometric<'a> {
    pub target: Image,
    pub mask: Image,
    pub renderer: &'a dyn Renderer,
    pub embedder: Option<&'a dyn Embedder>,
}

pub struct FitProblem<'a> {
    pub model: &'a BodyModel,
    pub observations: Observations,
    pub prior: &'a GenderPrior,
    pub weights: LossWeights,
    /// Regressed parameters to stay close to, if any.
    pub param_targets: Option<Parameters>,
    pub photometric: Option<Photometric<'a>>,
}

impl<'a> FitProblem<'a> {
    pub fn new(model: &'a BodyModel, observations: Observations, prior: &'a GenderPrior) -> Self {
        FitProblem {
            model,
            observations,
            prior,
            weights: LossWeights::default(),
            param_targets: None,
            photometric: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.observations.validate(self.model)?;
        self.weights.validate()?;
        self.prior.validate()?;
        if self.model.n_shape > 0 {
            let label = self.observations.gender.unwrap_or(Gender::Unknown);
            check_len("shape prior", self.model.n_shape, self.prior.class(label)?.dim())?;
        }
        if let Some(p) = &self.param_targets {
            p.validate(self.model)?;
        }
        if let Some(ph) = &self.photometric {
            if ph.mask.height != ph.target.height || ph.mask.width != ph.target.width || ph.mask.channels != 1 {
                return Err(Error::ShapeMismatch("photometric mask must be H x W x 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitCameras {
    pub body: WeakPerspectiveCamera,
    pub face: WeakPerspectiveCamera,
    pub hand: WeakPerspectiveCamera,
}

impl FitCameras {
    pub fn uniform(cam: WeakPerspectiveCamera) -> Self {
        FitCameras {
            body: cam,
            face: cam,
            hand: cam,
        }
    }

    fn to_flat(self) -> [f64; CAMERA_PARAMS] {
        let mut out = [0.0; CAMERA_PARAMS];
        for (k, c) in [self.body, self.face, self.hand].iter().enumerate() {
            out[3 * k] = c.s;
            out[3 * k + 1] = c.t[0];
            out[3 * k + 2] = c.t[1];
        }
        out
    }

    fn from_flat(x: &[f64]) -> Result<Self> {
        let cam = |k: usize| WeakPerspectiveCamera::new(x[3 * k], [x[3 * k + 1], x[3 * k + 2]]);
        Ok(FitCameras {
            body: cam(0)?,
            face: cam(1)?,
            hand: cam(2)?,
        })
    }
}

/// Blocks of the unknowns a stage may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    BodyCamera,
    FaceCamera,
    HandCamera,
    /// Root joints.
    GlobalOrient,
    /// Every joint not covered by another pose group.
    BodyPose,
    /// Wrist subtrees.
    HandPose,
    /// Neck and head.
    HeadPose,
    JawPose,
    Expression,
    Shape,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::BodyCamera,
        ParamGroup::FaceCamera,
        ParamGroup::HandCamera,
        ParamGroup::GlobalOrient,
        ParamGroup::BodyPose,
        ParamGroup::HandPose,
        ParamGroup::HeadPose,
        ParamGroup::JawPose,
        ParamGroup::Expression,
        ParamGroup::Shape,
    ];
}

/// Pose group owning joint `j`.
pub fn joint_group(model: &BodyModel, j: usize) -> ParamGroup {
    let r = &model.roles;
    if model.parents[j].is_none() {
        ParamGroup::GlobalOrient
    } else if r.jaw == Some(j) {
        ParamGroup::JawPose
    } else if r.neck == Some(j) || r.head == Some(j) {
        ParamGroup::HeadPose
    } else if r.left_hand_joints.contains(&j) || r.right_hand_joints.contains(&j) {
        ParamGroup::HandPose
    } else {
        ParamGroup::BodyPose
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub groups: Vec<ParamGroup>,
    pub iterations: usize,
    pub lr: f64,
    /// Width in pixels of the Charbonnier smoothing applied to the 2D L1
    /// terms during this stage; 0 keeps them exact.
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Adam steps with backtracking; `lr` is the step size.
    #[default]
    Adam,
    /// Limited-memory BFGS; `lr` sizes the first step only.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub stages: Vec<Stage>,
    /// Gradient norm (over the free block) below which a stage stops.
    pub grad_tol: f64,
    /// Cap on the total number of iterations across stages.
    pub max_iterations: usize,
    /// Consecutive rejected steps that end a stage.
    pub patience: usize,
    pub max_halvings: usize,
    /// Factor applied to the stage learning rate after a rejected step.
    pub reject_decay: f64,
    /// Factor applied after an accepted step, capped at the stage rate.
    pub accept_growth: f64,
    /// Carried for reproducibility records; the optimizer is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        use ParamGroup::*;
        let stage = |groups: &[ParamGroup], iterations, lr, smoothing| Stage {
            groups: groups.to_vec(),
            iterations,
            lr,
            smoothing,
            optimizer: Optimizer::Adam,
        };
        let polish = |smoothing| Stage {
            optimizer: Optimizer::Lbfgs,
            ..stage(&ParamGroup::ALL, 3000, 1e-2, smoothing)
        };
        FitConfig {
            stages: vec![
                stage(&[BodyCamera, GlobalOrient], 150, 1e-2, 1.0),
                stage(&[BodyCamera, GlobalOrient, BodyPose, HeadPose], 400, 1e-2, 1.0),
                stage(
                    &[HandPose, HeadPose, JawPose, Expression, Shape, FaceCamera, HandCamera],
                    400,
                    5e-3,
                    1.0,
                ),
                stage(&ParamGroup::ALL, 800, 5e-3, 0.1),
                polish(0.3),
                polish(0.03),
                polish(0.003),
            ],
            grad_tol: 1e-9,
            max_iterations: 100_000,
            patience: 25,
            max_halvings: 10,
            reject_decay: 0.5,
            accept_growth: 1.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Zero-iteration stages are allowed and skipped.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::ConfigInvalid(format!("stage {i}: lr must be positive")));
            }
            if !(s.smoothing >= 0.0 && s.smoothing.is_finite()) {
                return Err(Error::ConfigInvalid(format!("stage {i}: smoothing must be nonnegative")));
            }
            if s.groups.is_empty() {
                return Err(Error::ConfigInvalid(format!("stage {i}: no parameter groups")));
            }
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::ConfigInvalid("grad_tol must be nonnegative".into()));
        }
        if !(self.reject_decay > 0.0 && self.reject_decay <= 1.0) {
            return Err(Error::ConfigInvalid("reject_decay must lie in (0, 1]".into()));
        }
        if !(self.accept_growth >= 1.0 && self.accept_growth.is_finite()) {
            return Err(Error::ConfigInvalid("accept_growth must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::ConfigInvalid("patience must be positive".into()));
        }
        Ok(())
    }

    /// The same schedule with every stage's iteration count scaled.
    pub fn scaled_iterations(mut self, factor: f64) -> Self {
        for s in &mut self.stages {
            s.iterations = (s.iterations as f64 * factor).round() as usize;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub iteration: usize,
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Parameters,
    pub cameras: FitCameras,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub final_loss: f64,
    pub final_breakdown: LossBreakdown,
}

/// Camera mapping `rest` points onto `observed` ones: scale from the ratio
/// of bounding-box diagonals, translation from the centroid difference.
pub fn init_camera(observed: &[[f64; 2]], visibility: &[bool], rest: &[Vec3]) -> Result<WeakPerspectiveCamera> {
    check_len("camera init points", observed.len(), rest.len())?;
    check_len("camera init visibility", observed.len(), visibility.len())?;
    let vis: Vec<usize> = (0..observed.len()).filter(|&i| visibility[i]).collect();
    if vis.len() < 2 {
        return Err(Error::TooFewKeypoints(vis.len()));
    }
    let diag = |pts: &mut dyn Iterator<Item = [f64; 2]>| {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    };
    let d_obs = diag(&mut vis.iter().map(|&i| observed[i]));
    let d_rest = diag(&mut vis.iter().map(|&i| [rest[i].x, rest[i].y]));
    if !(d_obs > 0.0 && d_rest > 0.0) {
        return Err(Error::DegenerateConfiguration("keypoints have zero extent".into()));
    }
    let s = d_obs / d_rest;
    let n = vis.len() as f64;
    let mut t = [0.0; 2];
    for k in 0..2 {
        let co = vis.iter().map(|&i| observed[i][k]).sum::<f64>() / n;
        let cr = vis.iter().map(|&i| rest[i][k]).sum::<f64>() / n;
        t[k] = co - s * cr;
    }
    WeakPerspectiveCamera::new(s, t)
}

/// Initial cameras from the rest pose. A camera without its own
/// observations copies one that has them.
pub fn init_cameras(model: &BodyModel, obs: &Observations) -> Result<FitCameras> {
    let rest = pose_model(model, &Parameters::zeros(model))?;
    let roles = &model.roles;
    let gather = |src: &[Vec3], idx: &[usize]| idx.iter().map(|&i| src[i]).collect::<Vec<_>>();
    let body = match &obs.body_joints_2d {
        Some(k) => Some(init_camera(&k.points, &k.visibility, &gather(&rest.joints_posed, &roles.body_joints))?),
        None => None,
    };
    let face = match &obs.face_landmarks {
        Some(l) => Some(init_camera(&l.points, &l.visibility, &gather(&rest.vertices, &model.landmark_indices))?),
        None => None,
    };
    let hand = match &obs.hand_joints_2d {
        Some(k) => {
            let idx: Vec<usize> = roles.left_hand_joints.iter().chain(&roles.right_hand_joints).copied().collect();
            Some(init_camera(&k.points, &k.visibility, &gather(&rest.joints_posed, &idx))?)
        }
        None => None,
    };
    let fallback = body.or(face).or(hand).unwrap_or_else(WeakPerspectiveCamera::identity);
    Ok(FitCameras {
        body: body.unwrap_or(fallback),
        face: face.unwrap_or(fallback),
        hand: hand.unwrap_or(fallback),
    })
}

/// Free-entry mask over `[params | cameras]` for a set of groups.
pub fn stage_mask(model: &BodyModel, params: &Parameters, groups: &[ParamGroup]) -> Vec<bool> {
    let groups: BTreeSet<ParamGroup> = groups.iter().copied().collect();
    let layout = ParamLayout::of(params);
    let mut mask = vec![false; layout.len + CAMERA_PARAMS];
    let mut set = |r: std::ops::Range<usize>| mask[r].iter_mut().for_each(|m| *m = true);
    if groups.contains(&ParamGroup::Shape) {
        set(layout.beta.clone());
    }
    if groups.contains(&ParamGroup::Expression) {
        set(layout.psi.clone());
    }
    for (j, r) in layout.pose.iter().enumerate() {
        if groups.contains(&joint_group(model, j)) {
            set(r.clone());
        }
    }
    for (k, g) in [ParamGroup::BodyCamera, ParamGroup::FaceCamera, ParamGroup::HandCamera].iter().enumerate() {
        if groups.contains(g) {
            set(layout.len + 3 * k..layout.len + 3 * k + 3);
        }
    }
    mask
}

fn unpack(template: &Parameters, x: &[f64]) -> Result<(Parameters, FitCameras)> {
    let n = x.len() - CAMERA_PARAMS;
    Ok((template.with_flat(&x[..n])?, FitCameras::from_flat(&x[n..])?))
}

/// Objective at a packed point; any failure means "reject this point".
fn eval_packed(problem: &FitProblem<'_>, template: &Parameters, x: &[f64], smoothing: f64) -> Result<Evaluation> {
    let (p, c) = unpack(template, x)?;
    evaluate(problem, &p, &c, smoothing)
}

/// Runs the staged schedule from the neutral initialization.
pub fn fit(problem: &FitProblem<'_>, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    problem.validate()?;
    let init = Parameters::zeros(problem.model);
    let cams = init_cameras(problem.model, &problem.observations)?;
    run(problem, config, init, cams)
}

/// Runs the staged schedule from a given starting point.
pub fn fit_from(
    problem: &FitProblem<'_>,
    config: &FitConfig,
    init: Parameters,
    cams: FitCameras,
) -> Result<FitResult> {
    config.validate()?;
    problem.validate()?;
    init.validate(problem.model)?;
    run(problem, config, init, cams)
}

struct StageRun<'p, 'a> {
    problem: &'p FitProblem<'a>,
    config: &'p FitConfig,
    template: &'p Parameters,
    stage: &'p Stage,
    index: usize,
    mask: Vec<bool>,
}

struct State {
    x: Vec<f64>,
    cur: Evaluation,
    trace: Vec<TraceEntry>,
    total_iters: usize,
}

impl State {
    fn record(&mut self, stage: usize, iteration: usize, accepted: bool) {
        self.trace.push(TraceEntry {
            stage,
            iteration,
            total: self.cur.total,
            breakdown: self.cur.breakdown.clone(),
            accepted,
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StageRun<'_, '_> {
    fn eval(&self, x: &[f64]) -> Option<Evaluation> {
        eval_packed(self.problem, self.template, x, self.stage.smoothing)
            .ok()
            .filter(|e| e.grad.iter().all(|g| g.is_finite()))
    }

    fn masked_grad(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect()
    }

    fn small_gradient(&self, g: &[f64]) -> bool {
        dot(&self.masked_grad(g), g).sqrt() <= self.config.grad_tol
    }

    /// Returns whether the stage converged.
    fn adam(&self, st: &mut State, cam_units: &[f64]) -> bool {
        let config = self.config;
        let mut adam = Adam::new(AdamConfig::with_lr(self.stage.lr), st.x.len());
        let mut rejected = 0;
        // Gradient seen just past a rejected step; fed to Adam next so the
        // moments average both sides of a kink.
        let mut probe: Option<Vec<f64>> = None;
        for it in 0..self.stage.iterations {
            if st.total_iters >= config.max_iterations {
                break;
            }
            if self.small_gradient(&st.cur.grad) {
                return true;
            }
            st.total_iters += 1;
            let mut step = adam.step(probe.as_deref().unwrap_or(&st.cur.grad), Some(&self.mask));
            let n = step.len() - CAMERA_PARAMS;
            step[n..].iter_mut().zip(cam_units).for_each(|(d, u)| *d *= u);
            probe = None;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=config.max_halvings {
                let cand: Vec<f64> = st.x.iter().zip(&step).map(|(a, d)| a + scale * d).collect();
                if let Some(e) = self.eval(&cand) {
                    if e.total <= st.cur.total + ACCEPT_TOL {
                        accepted = Some((cand, e));
                        break;
                    }
                    probe.get_or_insert(e.grad);
                }
                scale *= 0.5;
            }
            let ok = accepted.is_some();
            if let Some((c, e)) = accepted {
                st.x = c;
                st.cur = e;
                rejected = 0;
                adam.config.lr = (adam.config.lr * config.accept_growth).min(self.stage.lr);
            } else {
                rejected += 1;
                adam.config.lr *= config.reject_decay;
            }
            st.record(self.index, it, ok);
            if rejected >= config.patience {
                return true;
            }
        }
        false
    }

    /// Limited-memory BFGS with a backtracking Armijo search, run in
    /// coordinates divided by `units`. The first step moves the largest free
    /// coordinate by `lr`.
    fn lbfgs(&self, st: &mut State, units: &[f64]) -> bool {
        const MEMORY: usize = 10;
        let config = self.config;
        let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>)> = Default::default();
        let scaled = |g: &[f64]| -> Vec<f64> { self.masked_grad(g).iter().zip(units).map(|(g, u)| g * u).collect() };
        let mut g = scaled(&st.cur.grad);
        for it in 0..self.stage.iterations {
            if st.total_iters >= config.max_iterations {
                break;
            }
            if dot(&g, &g).sqrt() <= config.grad_tol {
                return true;
            }
            st.total_iters += 1;
            let mut q = g.clone();
            let mut alpha = Vec::with_capacity(hist.len());
            for (s, y) in hist.iter().rev() {
                let a = dot(s, &q) / dot(y, s);
                q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
                alpha.push(a);
            }
            let gamma = match hist.back() {
                Some((s, y)) => dot(s, y) / dot(y, y),
                None => self.stage.lr / g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            };
            q.iter_mut().for_each(|q| *q *= gamma);
            for ((s, y), a) in hist.iter().zip(alpha.iter().rev()) {
                let b = dot(y, &q) / dot(y, s);
                q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
            }
            let mut slope = -dot(&g, &q);
            if !(slope < 0.0) {
                hist.clear();
                let m = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                q = g.iter().map(|v| v * self.stage.lr / m).collect();
                slope = -dot(&g, &q);
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=config.max_halvings.max(30) {
                let cand: Vec<f64> = st.x.iter().zip(&q).zip(units).map(|((a, d), u)| a - t * d * u).collect();
                if let Some(e) = self.eval(&cand) {
                    if e.total <= st.cur.total + 1e-4 * t * slope {
                        accepted = Some((cand, e));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((c, e)) = accepted else {
                st.record(self.index, it, false);
                return true;
            };
            let g_new = scaled(&e.grad);
            let s: Vec<f64> = q.iter().map(|d| -t * d).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if hist.len() == MEMORY {
                    hist.pop_front();
                }
                hist.push_back((s, y));
            }
            st.x = c;
            st.cur = e;
            g = g_new;
            st.record(self.index, it, true);
        }
        false
    }
}

fn run(problem: &FitProblem<'_>, config: &FitConfig, init: Parameters, cams: FitCameras) -> Result<FitResult> {
    let model = problem.model;
    let mut x = init.to_flat();
    x.extend_from_slice(&cams.to_flat());

    let cur = match objective(problem, &init, &cams) {
        Ok(e) if e.grad.iter().all(|g| g.is_finite()) => e,
        Ok(_) | Err(Error::NonFiniteLoss) => return Err(Error::Diverged(0)),
        Err(e) => return Err(e),
    };
    // Camera steps are taken in model units: a unit step in `s`, `tx` or
    // `ty` moves the projection by about one model unit.
    let cam_units: Vec<f64> = [cams.body.s, cams.face.s, cams.hand.s]
        .iter()
        .flat_map(|&s| [s; 3])
        .collect();
    let mut units = vec![1.0; x.len() - CAMERA_PARAMS];
    units.extend_from_slice(&cam_units);
    let mut st = State {
        x,
        cur,
        trace: Vec::new(),
        total_iters: 0,
    };
    let mut converged = false;

    for (index, stage) in config.stages.iter().enumerate() {
        if stage.iterations == 0 {
            continue;
        }
        st.cur = eval_packed(problem, &init, &st.x, stage.smoothing)?;
        let sr = StageRun {
            problem,
            config,
            template: &init,
            stage,
            index,
            mask: stage_mask(model, &init, &stage.groups),
        };
        converged = match stage.optimizer {
            Optimizer::Adam => sr.adam(&mut st, &cam_units),
            Optimizer::Lbfgs => sr.lbfgs(&mut st, &units),
        };
    }

    let (params, cameras) = unpack(&init, &st.x)?;
    let cur = match objective(problem, &params, &cameras) {
        Ok(e) => e,
        Err(Error::NonFiniteLoss) => return Err(Error::Diverged(st.total_iters)),
        Err(e) => return Err(e),
    };
    Ok(FitResult {
        params,
        cameras,
        trace: st.trace,
        converged,
        final_loss: cur.total,
        final_breakdown: cur.breakdown,
    })
}

/// Random parameters whose pose is fully determined by joint positions and
/// landmarks: `β` drawn from `shape`, `ψ` standard normal scaled by
/// `expr_sigma`, the jaw opened by a small nonnegative yaw. Joints with
/// several children rotate freely with per-axis deviation `pose_sigma`;
/// single-child joints swing about an axis normal to their bone (no
/// twist); leaves keep the identity.
pub fn sample_parameters(
    model: &BodyModel,
    shape: &GaussianClass,
    pose_sigma: f64,
    expr_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Parameters> {
    check_len("shape class", model.n_shape, shape.dim())?;
    let n = model.n_shape;
    let cov = nalgebra::DMatrix::from_row_slice(n, n, &shape.cov);
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let z = nalgebra::DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let b = chol.l() * z;
    let mut params = Parameters::zeros(model);
    params.beta = (0..n).map(|i| shape.mu[i] + b[i]).collect();
    let rest = pose_model(model, &params)?.joints_rest;
    let children = model.children();
    let mut normal = || pose_sigma * rng.sample::<f64, _>(StandardNormal);
    for j in 0..model.num_joints() {
        params.pose[j] = match params.pose[j] {
            JointRotation::Euler(_) => JointRotation::Euler(EulerXYZ::new(0.0, 0.0, normal().abs())),
            JointRotation::SixD(r) => {
                let mut aa = Vec3::new(normal(), normal(), normal());
                match children[j].as_slice() {
                    [] => aa = Vec3::zeros(),
                    [c] => {
                        let bone = rest[*c] - rest[j];
                        if bone.norm() > 0.0 {
                            let u = bone.normalize();
                            aa -= u * u.dot(&aa);
                        }
                    }
                    _ => {}
                }
                if aa == Vec3::zeros() {
                    JointRotation::SixD(r)
                } else {
                    JointRotation::SixD(matrix_to_rot6d(&axis_angle_to_matrix(&[aa.x, aa.y, aa.z])?)?)
                }
            }
        };
    }
    params.psi = (0..model.n_expr).map(|_| expr_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(params)
}

/// Projected keypoints and landmarks of `params` seen through `cams`, with
/// i.i.d. Gaussian pixel noise of deviation `noise_px`.
pub fn synthesize_observations(
    model: &BodyModel,
    params: &Parameters,
    cams: &FitCameras,
    noise_px: f64,
    seed: u64,
) -> Result<Observations> {
    let posed = pose_model(model, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roles = &model.roles;
    let mut noisy = |pts: Vec<Vec3>, cam: &WeakPerspectiveCamera| -> Result<Vec<[f64; 2]>> {
        Ok(project(&pts, cam)?
            .iter()
            .map(|p| {
                let mut n = || noise_px * rng.sample::<f64, _>(StandardNormal);
                [p.x + n(), p.y + n()]
            })
            .collect())
    };
    let gather = |src: &[Vec3], idx: &[usize]| idx.iter().map(|&i| src[i]).collect::<Vec<_>>();
    let body = noisy(gather(&posed.joints_posed, &roles.body_joints), &cams.body)?;
    let hand_idx: Vec<usize> = roles.left_hand_joints.iter().chain(&roles.right_hand_joints).copied().collect();
    let hand = noisy(gather(&posed.joints_posed, &hand_idx), &cams.hand)?;
    let lmk = noisy(gather(&posed.vertices, &model.landmark_indices), &cams.face)?;
    let n_lmk = lmk.len();
    Ok(Observations {
        body_joints_2d: Some(Keypoints2d::all_visible(body)),
        body_joints_3d: None,
        hand_joints_2d: (!hand_idx.is_empty()).then(|| Keypoints2d::all_visible(hand)),
        face_landmarks: if n_lmk > 0 {
            Some(LandmarkSet::new(lmk, vec![true; n_lmk])?)
        } else {
            None
        },
        gender: None,
    })
}
