//! The fitting objective and its analytic gradient.

use nalgebra::Matrix3;

use crate::body_model::{pose_model, pose_model_vjp, JointRotation, ParamLayout, Parameters, PoseUpstream, Vec3};
use crate::camera::{project, project_vjp, Vec2, WeakPerspectiveCamera};
use crate::error::{Error, Result};
use crate::losses::{
    closure_loss_grad, expression_prior_grad, face_yaw_prior_grad, identity_loss_grad, jaw_prior_grad,
    joint_loss_2d_grad, joint_loss_3d_grad, landmark_loss_grad, param_loss_grad, photometric_loss_grad,
    total_loss, LossBreakdown, LossTerm, ParamSelection,
};
use crate::prior::gendered_shape_loss_grad;
use crate::rotations::{matrix_yaw, matrix_yaw_grad};

use super::{FitCameras, FitProblem, CAMERA_PARAMS};

/// Objective value, weighted per-term breakdown and gradient over
/// `[params.to_flat() | body cam | face cam | hand cam]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

struct Accum {
    joints: Vec<Vec3>,
    vertices: Vec<Vec3>,
    world: Vec<Matrix3<f64>>,
    flat: Vec<f64>,
    cams: [f64; CAMERA_PARAMS],
}

impl Accum {
    /// Pushes `∂L/∂uv` of points gathered from `src` at `idx` back through
    /// camera `slot`.
    fn through_camera(
        &mut self,
        to_vertices: bool,
        idx: &[usize],
        pts: &[Vec3],
        cam: &WeakPerspectiveCamera,
        slot: usize,
        g_uv: &[Vec2],
    ) {
        let g = project_vjp(pts, cam, g_uv);
        let dst = if to_vertices { &mut self.vertices } else { &mut self.joints };
        for (&i, gp) in idx.iter().zip(&g.points) {
            dst[i] += gp;
        }
        self.cams[3 * slot] += g.s;
        self.cams[3 * slot + 1] += g.t[0];
        self.cams[3 * slot + 2] += g.t[1];
    }
}

fn gather(src: &[Vec3], idx: &[usize]) -> Vec<Vec3> {
    idx.iter().map(|&i| src[i]).collect()
}

fn to_vec2(points: &[[f64; 2]]) -> Vec<Vec2> {
    points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

fn scaled<T: std::ops::Mul<f64, Output = T> + Copy>(g: &[T], w: f64) -> Vec<T> {
    g.iter().map(|&x| x * w).collect()
}

/// Weighted objective at `(params, cams)` with its gradient.
pub fn objective(problem: &FitProblem<'_>, params: &Parameters, cams: &FitCameras) -> Result<Evaluation> {
    evaluate(problem, params, cams, 0.0)
}

/// `d/dr` of `√(r² + ε²)`, the smoothed `|r|`.
fn smooth_sign(r: f64, eps: f64) -> f64 {
    r / (r * r + eps * eps).sqrt()
}

fn charbonnier(r: f64, eps: f64) -> f64 {
    (r * r + eps * eps).sqrt() - eps
}

fn smooth_residual_value(pred: &[Vec2], gt: &[Vec2], vis: &[bool], eps: f64) -> f64 {
    pred.iter()
        .zip(gt)
        .zip(vis)
        .filter(|(_, &v)| v)
        .map(|((p, g), _)| charbonnier(p.x - g.x, eps) + charbonnier(p.y - g.y, eps))
        .sum()
}

fn smooth_residual_grad(pred: &[Vec2], gt: &[Vec2], vis: &[bool], eps: f64) -> Vec<Vec2> {
    pred.iter()
        .zip(gt)
        .zip(vis)
        .map(|((p, g), &v)| {
            if v {
                (p - g).map(|r| smooth_sign(r, eps))
            } else {
                Vec2::zeros()
            }
        })
        .collect()
}

/// With `smoothing > 0` the 2D L1 terms (joints, hands, landmarks, closure)
/// are replaced by their Charbonnier surrogate `√(r² + ε²) − ε` of width
/// `ε = smoothing` pixels, in value and gradient alike.
pub(super) fn evaluate(
    problem: &FitProblem<'_>,
    params: &Parameters,
    cams: &FitCameras,
    smoothing: f64,
) -> Result<Evaluation> {
    let model = problem.model;
    let w = &problem.weights;
    let obs = &problem.observations;
    let roles = &model.roles;
    let posed = pose_model(model, params)?;
    let layout = ParamLayout::of(params);
    let (nv, nj) = (model.num_vertices(), model.num_joints());

    let mut comps = LossBreakdown::new();
    let mut acc = Accum {
        joints: vec![Vec3::zeros(); nj],
        vertices: vec![Vec3::zeros(); nv],
        world: vec![Matrix3::zeros(); nj],
        flat: vec![0.0; layout.len],
        cams: [0.0; CAMERA_PARAMS],
    };

    if let Some(kp) = &obs.body_joints_2d {
        let idx = &roles.body_joints;
        let pts = gather(&posed.joints_posed, idx);
        let uv = project(&pts, &cams.body)?;
        let gt = to_vec2(&kp.points);
        let (mut v, mut g) = joint_loss_2d_grad(&uv, &gt, &kp.visibility)?;
        if smoothing > 0.0 {
            v = smooth_residual_value(&uv, &gt, &kp.visibility, smoothing);
            g = smooth_residual_grad(&uv, &gt, &kp.visibility, smoothing);
        }
        comps.insert(LossTerm::Joints2d, v);
        acc.through_camera(false, idx, &pts, &cams.body, 0, &scaled(&g, w.joints_2d));
    }

    if let Some(j3) = &obs.body_joints_3d {
        let idx = &roles.body_joints;
        let pts = gather(&posed.joints_posed, idx);
        let gt: Vec<Vec3> = j3.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        let (v, g) = joint_loss_3d_grad(&pts, &gt)?;
        comps.insert(LossTerm::Joints3d, v);
        for (&i, gi) in idx.iter().zip(&g) {
            acc.joints[i] += gi * w.joints_3d;
        }
    }

    let hand_idx: Vec<usize> = roles
        .left_hand_joints
        .iter()
        .chain(&roles.right_hand_joints)
        .copied()
        .collect();
    let mut hand_value = None;
    if let Some(kp) = &obs.hand_joints_2d {
        let pts = gather(&posed.joints_posed, &hand_idx);
        let uv = project(&pts, &cams.hand)?;
        let gt = to_vec2(&kp.points);
        let (mut v, mut g) = joint_loss_2d_grad(&uv, &gt, &kp.visibility)?;
        if smoothing > 0.0 {
            v = smooth_residual_value(&uv, &gt, &kp.visibility, smoothing);
            g = smooth_residual_grad(&uv, &gt, &kp.visibility, smoothing);
        }
        hand_value = Some(v);
        acc.through_camera(false, &hand_idx, &pts, &cams.hand, 2, &scaled(&g, w.hand));
    }

    if let Some(target) = &problem.param_targets {
        let body_joints: Vec<usize> = (0..nj).filter(|j| !hand_idx.contains(j)).collect();
        let sel = ParamSelection {
            joints: Some(&body_joints),
            include_beta: true,
        };
        let (v, g) = param_loss_grad(params, target, &sel)?;
        comps.insert(LossTerm::Params, v);
        acc.flat.iter_mut().zip(&g).for_each(|(a, b)| *a += w.params * b);
        let sel = ParamSelection {
            joints: Some(&hand_idx),
            include_beta: false,
        };
        let (v, g) = param_loss_grad(params, target, &sel)?;
        *hand_value.get_or_insert(0.0) += v;
        acc.flat.iter_mut().zip(&g).for_each(|(a, b)| *a += w.hand * b);
    }
    if let Some(v) = hand_value {
        comps.insert(LossTerm::Hand, v);
    }

    if let Some(lmk) = &obs.face_landmarks {
        let idx = &model.landmark_indices;
        let pts = gather(&posed.vertices, idx);
        let uv = project(&pts, &cams.face)?;
        let (mut vl, mut gl) = landmark_loss_grad(&uv, lmk)?;
        let (mut vc, mut gc) = closure_loss_grad(&uv, lmk, &model.closure_pairs)?;
        if smoothing > 0.0 {
            let gt: Vec<Vec2> = (0..lmk.points.len()).map(|i| lmk.point(i)).collect();
            vl = smooth_residual_value(&uv, &gt, &lmk.visibility, smoothing);
            gl = smooth_residual_grad(&uv, &gt, &lmk.visibility, smoothing);
            vc = 0.0;
            gc.iter_mut().for_each(|g| *g = Vec2::zeros());
            for &(i, j) in &model.closure_pairs {
                if lmk.visibility[i] && lmk.visibility[j] {
                    let r = (uv[i] - uv[j]) - (gt[i] - gt[j]);
                    vc += charbonnier(r.x, smoothing) + charbonnier(r.y, smoothing);
                    let d = r.map(|x| smooth_sign(x, smoothing));
                    gc[i] += d;
                    gc[j] -= d;
                }
            }
        }
        comps.insert(LossTerm::Landmarks, vl);
        comps.insert(LossTerm::Closure, vc);
        let g: Vec<Vec2> = gl.iter().zip(&gc).map(|(a, b)| a * w.landmarks + b * w.closure).collect();
        acc.through_camera(true, idx, &pts, &cams.face, 1, &g);
    }

    if let Some(ph) = &problem.photometric {
        let all: Vec<usize> = (0..nv).collect();
        let uv = project(&posed.vertices, &cams.face)?;
        let rendered = ph.renderer.render(&uv)?;
        let (vp, gp) = photometric_loss_grad(&ph.target, &rendered, &ph.mask)?;
        comps.insert(LossTerm::Photometric, vp);
        let mut g_img = gp;
        g_img.data.iter_mut().for_each(|x| *x *= w.photometric);
        if let Some(emb) = ph.embedder {
            let et = emb.embed(&ph.target)?;
            let er = emb.embed(&rendered)?;
            let (vi, _, gb) = identity_loss_grad(&et, &er)?;
            comps.insert(LossTerm::Identity, vi);
            let gi = emb.embed_vjp(&rendered, &scaled(&gb, w.identity))?;
            g_img.data.iter_mut().zip(&gi.data).for_each(|(a, b)| *a += b);
        }
        let g_uv = ph.renderer.render_vjp(&uv, &g_img)?;
        acc.through_camera(true, &all, &posed.vertices, &cams.face, 1, &g_uv);
    }

    if model.n_expr > 0 {
        let (v, g) = expression_prior_grad(&params.psi);
        comps.insert(LossTerm::Expression, v);
        for (k, gk) in layout.psi.clone().zip(g) {
            acc.flat[k] += w.expression * gk;
        }
    }

    if let Some(j) = roles.jaw {
        if let JointRotation::Euler(e) = &params.pose[j] {
            let (v, g) = jaw_prior_grad(e);
            comps.insert(LossTerm::Jaw, v);
            for (k, gk) in layout.pose[j].clone().zip(g) {
                acc.flat[k] += w.jaw * gk;
            }
        }
    }

    if let Some(h) = roles.head {
        let r = posed.world_transforms[h].rotation.matrix();
        let (v, g_deg) = face_yaw_prior_grad(matrix_yaw(r).to_degrees());
        comps.insert(LossTerm::FaceYaw, v);
        if g_deg != 0.0 {
            acc.world[h] += matrix_yaw_grad(r) * (w.face_yaw * g_deg.to_degrees());
        }
    }

    if model.n_shape > 0 {
        let label = obs.gender.unwrap_or(crate::prior::Gender::Unknown);
        let (v, g) = gendered_shape_loss_grad(&params.beta, label, problem.prior)?;
        comps.insert(LossTerm::Shape, v);
        for (k, gk) in layout.beta.clone().zip(g) {
            acc.flat[k] += w.shape * gk;
        }
    }

    let (total, breakdown) = total_loss(&comps, w)?;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    let upstream = PoseUpstream {
        vertices: Some(acc.vertices),
        joints: Some(acc.joints),
        world_rotations: Some(acc.world),
    };
    let gp = pose_model_vjp(model, params, &posed, &upstream)?;
    let mut grad = acc.flat;
    grad.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
    grad.extend_from_slice(&acc.cams);
    Ok(Evaluation { total, breakdown, grad })
}
