//! Training losses and priors as pure scalar functions.
//!
//! Each loss has a `*_grad` companion returning the value together with the
//! gradient with respect to its differentiable argument(s). L1 terms use the
//! subgradient `0` at a zero residual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::body_model::{Parameters, ParamLayout, Vec3};
use crate::camera::Vec2;
use crate::error::{check_len, Error, Result};
use crate::rotations::EulerXYZ;

/// Hinge threshold of the face yaw prior, in degrees.
pub const FACE_YAW_LIMIT_DEG: f64 = 90.0;

#[inline]
pub(crate) fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Ground-truth (or predicted) 68-point facial landmarks in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, visibility: Vec<bool>) -> Result<Self> {
        let set = LandmarkSet { points, visibility };
        set.validate()?;
        Ok(set)
    }

    pub fn all_visible(points: &[Vec2]) -> Result<Self> {
        LandmarkSet::new(
            points.iter().map(|p| [p.x, p.y]).collect(),
            vec![true; points.len()],
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_len("landmarks", crate::body_model::NUM_LANDMARKS, self.points.len())?;
        check_len("landmark visibility", self.points.len(), self.visibility.len())
    }

    pub fn point(&self, i: usize) -> Vec2 {
        Vec2::new(self.points[i][0], self.points[i][1])
    }
}

fn l1_2d(pred: &[Vec2], gt: &[Vec2], vis: Option<&[bool]>, grad: Option<&mut [Vec2]>) -> Result<f64> {
    check_len("predicted 2D points", gt.len(), pred.len())?;
    if let Some(v) = vis {
        check_len("visibility", gt.len(), v.len())?;
    }
    let mut total = 0.0;
    let mut grad = grad;
    for i in 0..gt.len() {
        if vis.is_some_and(|v| !v[i]) {
            continue;
        }
        let r = pred[i] - gt[i];
        total += r.x.abs() + r.y.abs();
        if let Some(g) = grad.as_deref_mut() {
            g[i] += Vec2::new(l1_sign(r.x), l1_sign(r.y));
        }
    }
    Ok(total)
}

/// `Σ ‖x̂ⱼ − xⱼ‖₁` over visible joints.
pub fn joint_loss_2d(pred: &[Vec2], gt: &[Vec2], vis: &[bool]) -> Result<f64> {
    l1_2d(pred, gt, Some(vis), None)
}

pub fn joint_loss_2d_grad(pred: &[Vec2], gt: &[Vec2], vis: &[bool]) -> Result<(f64, Vec<Vec2>)> {
    let mut g = vec![Vec2::zeros(); pred.len()];
    let v = l1_2d(pred, gt, Some(vis), Some(&mut g))?;
    Ok((v, g))
}

/// `Σ ‖X̂ⱼ − Xⱼ‖₁`.
pub fn joint_loss_3d(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    Ok(joint_loss_3d_grad(pred, gt)?.0)
}

pub fn joint_loss_3d_grad(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_len("predicted 3D joints", gt.len(), pred.len())?;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let r = p - g;
            total += r.x.abs() + r.y.abs() + r.z.abs();
            r.map(l1_sign)
        })
        .collect();
    Ok((total, grad))
}

/// Which joints (and whether shape) a parameter loss compares.
#[derive(Debug, Clone, Default)]
pub struct ParamSelection<'a> {
    /// `None` compares every joint.
    pub joints: Option<&'a [usize]>,
    pub include_beta: bool,
}

/// `‖θ̂ − θ‖² + ‖β̂ − β‖²`, comparing pose encodings directly. The returned
/// gradient is with respect to `pred` in its flat layout.
pub fn param_loss_grad(
    pred: &Parameters,
    gt: &Parameters,
    sel: &ParamSelection<'_>,
) -> Result<(f64, Vec<f64>)> {
    check_len("beta", gt.beta.len(), pred.beta.len())?;
    check_len("pose", gt.pose.len(), pred.pose.len())?;
    let lp = ParamLayout::of(pred);
    let lg = ParamLayout::of(gt);
    if lp != lg {
        return Err(Error::ShapeMismatch("parameter encodings differ".into()));
    }
    let (fp, fg) = (pred.to_flat(), gt.to_flat());
    let mut grad = vec![0.0; fp.len()];
    let mut total = 0.0;
    let mut add = |range: std::ops::Range<usize>| {
        for k in range {
            let d = fp[k] - fg[k];
            total += d * d;
            grad[k] += 2.0 * d;
        }
    };
    if sel.include_beta {
        add(lp.beta.clone());
    }
    match sel.joints {
        Some(js) => {
            for &j in js {
                if j >= lp.pose.len() {
                    return Err(Error::IndexOutOfRange {
                        index: j,
                        len: lp.pose.len(),
                    });
                }
                add(lp.pose[j].clone());
            }
        }
        None => lp.pose.iter().for_each(|r| add(r.clone())),
    }
    Ok((total, grad))
}

/// Body parameter loss over every joint and the shape.
pub fn param_loss(pred: &Parameters, gt: &Parameters) -> Result<f64> {
    let sel = ParamSelection {
        joints: None,
        include_beta: true,
    };
    Ok(param_loss_grad(pred, gt, &sel)?.0)
}

/// `Σⱼ ‖m̂ⱼ − mⱼ‖₁` over the visible landmarks.
pub fn landmark_loss(pred: &[Vec2], gt: &LandmarkSet) -> Result<f64> {
    Ok(landmark_loss_grad(pred, gt)?.0)
}

pub fn landmark_loss_grad(pred: &[Vec2], gt: &LandmarkSet) -> Result<(f64, Vec<Vec2>)> {
    gt.validate()?;
    let pts: Vec<Vec2> = (0..gt.points.len()).map(|i| gt.point(i)).collect();
    let mut g = vec![Vec2::zeros(); pred.len()];
    let v = l1_2d(pred, &pts, Some(&gt.visibility), Some(&mut g))?;
    Ok((v, g))
}

/// `Σ_{(i,j)∈E} ‖(m̂ᵢ − m̂ⱼ) − (mᵢ − mⱼ)‖₁`; pairs with an invisible end are skipped.
pub fn closure_loss(pred: &[Vec2], gt: &LandmarkSet, pairs: &[(usize, usize)]) -> Result<f64> {
    Ok(closure_loss_grad(pred, gt, pairs)?.0)
}

pub fn closure_loss_grad(
    pred: &[Vec2],
    gt: &LandmarkSet,
    pairs: &[(usize, usize)],
) -> Result<(f64, Vec<Vec2>)> {
    gt.validate()?;
    check_len("predicted landmarks", gt.points.len(), pred.len())?;
    let n = pred.len();
    let mut grad = vec![Vec2::zeros(); n];
    let mut total = 0.0;
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                len: n,
            });
        }
        if !(gt.visibility[i] && gt.visibility[j]) {
            continue;
        }
        let r = (pred[i] - pred[j]) - (gt.point(i) - gt.point(j));
        total += r.x.abs() + r.y.abs();
        let s = r.map(l1_sign);
        grad[i] += s;
        grad[j] -= s;
    }
    Ok((total, grad))
}

/// A dense `H × W × C` float image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_len("image data", height * width * channels, data.len())?;
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }
}

/// `‖S ⊙ (I_f − I_r)‖₁,₁` with a single-channel binary mask `S`.
pub fn photometric_loss(target: &Image, rendered: &Image, mask: &Image) -> Result<f64> {
    Ok(photometric_loss_grad(target, rendered, mask)?.0)
}

/// Value and gradient with respect to the rendered image.
pub fn photometric_loss_grad(target: &Image, rendered: &Image, mask: &Image) -> Result<(f64, Image)> {
    if !target.same_shape(rendered) {
        return Err(Error::ShapeMismatch(format!(
            "images {}x{}x{} and {}x{}x{}",
            target.height, target.width, target.channels, rendered.height, rendered.width, rendered.channels
        )));
    }
    if mask.height != target.height || mask.width != target.width || mask.channels != 1 {
        return Err(Error::ShapeMismatch("mask must be H x W x 1".into()));
    }
    if mask.data.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::ShapeMismatch("mask must be binary".into()));
    }
    let c = target.channels;
    let mut grad = Image::zeros(target.height, target.width, c);
    let mut total = 0.0;
    for (px, &m) in mask.data.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for k in px * c..(px + 1) * c {
            let r = target.data[k] - rendered.data[k];
            total += r.abs();
            grad.data[k] = -l1_sign(r);
        }
    }
    Ok((total, grad))
}

/// `1 − cos(a, b)`.
pub fn identity_loss(emb_a: &[f64], emb_b: &[f64]) -> Result<f64> {
    Ok(identity_loss_grad(emb_a, emb_b)?.0)
}

/// Value and gradients with respect to both embeddings.
pub fn identity_loss_grad(emb_a: &[f64], emb_b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len("embedding", emb_a.len(), emb_b.len())?;
    let na = emb_a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = emb_b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = emb_a.iter().zip(emb_b).map(|(a, b)| a * b).sum();
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    let ga = emb_a
        .iter()
        .zip(emb_b)
        .map(|(a, b)| -(b / (na * nb) - cos * a / (na * na)))
        .collect();
    let gb = emb_a
        .iter()
        .zip(emb_b)
        .map(|(a, b)| -(a / (na * nb) - cos * b / (nb * nb)))
        .collect();
    Ok((1.0 - cos, ga, gb))
}

/// `‖ψ‖²`.
pub fn expression_prior(psi: &[f64]) -> f64 {
    psi.iter().map(|x| x * x).sum()
}

pub fn expression_prior_grad(psi: &[f64]) -> (f64, Vec<f64>) {
    (expression_prior(psi), psi.iter().map(|x| 2.0 * x).collect())
}

/// `pitch² + roll² + min(yaw, 0)²`: the jaw opens one way only.
pub fn jaw_prior(jaw: &EulerXYZ) -> f64 {
    jaw_prior_grad(jaw).0
}

pub fn jaw_prior_grad(jaw: &EulerXYZ) -> (f64, [f64; 3]) {
    let y = jaw.yaw.min(0.0);
    (
        jaw.pitch * jaw.pitch + jaw.roll * jaw.roll + y * y,
        [2.0 * jaw.pitch, 2.0 * jaw.roll, 2.0 * y],
    )
}

/// `max(|yaw| − 90°, 0)²`, yaw in degrees.
pub fn face_yaw_prior(yaw_degrees: f64) -> f64 {
    face_yaw_prior_grad(yaw_degrees).0
}

pub fn face_yaw_prior_grad(yaw_degrees: f64) -> (f64, f64) {
    let excess = yaw_degrees.abs() - FACE_YAW_LIMIT_DEG;
    if excess > 0.0 {
        (excess * excess, 2.0 * excess * l1_sign(yaw_degrees))
    } else {
        (0.0, 0.0)
    }
}

/// `‖F_b^p − F_p^fused‖₁`.
pub fn update_loss(body_part: &[f64], fused: &[f64]) -> Result<f64> {
    check_len("fused feature", body_part.len(), fused.len())?;
    Ok(body_part.iter().zip(fused).map(|(a, b)| (a - b).abs()).sum())
}

/// Every weighted term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Joints2d,
    Joints3d,
    Params,
    Hand,
    Landmarks,
    Closure,
    Photometric,
    Identity,
    Expression,
    Jaw,
    FaceYaw,
    Shape,
    Update,
}

impl LossTerm {
    pub const ALL: [LossTerm; 13] = [
        LossTerm::Joints2d,
        LossTerm::Joints3d,
        LossTerm::Params,
        LossTerm::Hand,
        LossTerm::Landmarks,
        LossTerm::Closure,
        LossTerm::Photometric,
        LossTerm::Identity,
        LossTerm::Expression,
        LossTerm::Jaw,
        LossTerm::FaceYaw,
        LossTerm::Shape,
        LossTerm::Update,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Joints2d => "joints_2d",
            LossTerm::Joints3d => "joints_3d",
            LossTerm::Params => "params",
            LossTerm::Hand => "hand",
            LossTerm::Landmarks => "landmarks",
            LossTerm::Closure => "closure",
            LossTerm::Photometric => "photometric",
            LossTerm::Identity => "identity",
            LossTerm::Expression => "expression",
            LossTerm::Jaw => "jaw",
            LossTerm::FaceYaw => "face_yaw",
            LossTerm::Shape => "shape",
            LossTerm::Update => "update",
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Nonnegative weight per loss term; all default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub joints_2d: f64,
    #[serde(default = "one")]
    pub joints_3d: f64,
    #[serde(default = "one")]
    pub params: f64,
    #[serde(default = "one")]
    pub hand: f64,
    #[serde(default = "one")]
    pub landmarks: f64,
    #[serde(default = "one")]
    pub closure: f64,
    #[serde(default = "one")]
    pub photometric: f64,
    #[serde(default = "one")]
    pub identity: f64,
    #[serde(default = "one")]
    pub expression: f64,
    #[serde(default = "one")]
    pub jaw: f64,
    #[serde(default = "one")]
    pub face_yaw: f64,
    #[serde(default = "one")]
    pub shape: f64,
    #[serde(default = "one")]
    pub update: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(w: f64) -> Self {
        LossWeights {
            joints_2d: w,
            joints_3d: w,
            params: w,
            hand: w,
            landmarks: w,
            closure: w,
            photometric: w,
            identity: w,
            expression: w,
            jaw: w,
            face_yaw: w,
            shape: w,
            update: w,
        }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Joints2d => self.joints_2d,
            LossTerm::Joints3d => self.joints_3d,
            LossTerm::Params => self.params,
            LossTerm::Hand => self.hand,
            LossTerm::Landmarks => self.landmarks,
            LossTerm::Closure => self.closure,
            LossTerm::Photometric => self.photometric,
            LossTerm::Identity => self.identity,
            LossTerm::Expression => self.expression,
            LossTerm::Jaw => self.jaw,
            LossTerm::FaceYaw => self.face_yaw,
            LossTerm::Shape => self.shape,
            LossTerm::Update => self.update,
        }
    }

    pub fn set(&mut self, term: LossTerm, w: f64) {
        let slot = match term {
            LossTerm::Joints2d => &mut self.joints_2d,
            LossTerm::Joints3d => &mut self.joints_3d,
            LossTerm::Params => &mut self.params,
            LossTerm::Hand => &mut self.hand,
            LossTerm::Landmarks => &mut self.landmarks,
            LossTerm::Closure => &mut self.closure,
            LossTerm::Photometric => &mut self.photometric,
            LossTerm::Identity => &mut self.identity,
            LossTerm::Expression => &mut self.expression,
            LossTerm::Jaw => &mut self.jaw,
            LossTerm::FaceYaw => &mut self.face_yaw,
            LossTerm::Shape => &mut self.shape,
            LossTerm::Update => &mut self.update,
        };
        *slot = w;
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::ConfigInvalid(format!(
                    "loss weight {} must be finite and nonnegative, got {w}",
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

pub type LossBreakdown = BTreeMap<LossTerm, f64>;

/// Weighted sum of the supplied (unweighted) components. The breakdown holds
/// the weighted values and sums to the total.
pub fn total_loss(components: &LossBreakdown, weights: &LossWeights) -> Result<(f64, LossBreakdown)> {
    weights.validate()?;
    let mut breakdown = LossBreakdown::new();
    let mut total = 0.0;
    for (&term, &value) in components {
        if !value.is_finite() {
            return Err(Error::NonFiniteComponent(term.name().into()));
        }
        let w = weights.get(term) * value;
        breakdown.insert(term, w);
        total += w;
    }
    Ok((total, breakdown))
}
