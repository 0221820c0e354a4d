//! The posable body function: linear shaping, joint regression, forward
//! kinematics and linear blend skinning, plus reverse-mode gradients of the
//! whole chain.
//!
//! Skinning is evaluated in displacement form,
//! `v' = v + Σⱼ wᵢⱼ [(Gⱼ − I)(v − cⱼ) + dⱼ]`, where `Gⱼ` is the world rotation
//! of joint `j`, `cⱼ` its rest position and `dⱼ` its displacement. This is
//! algebraically the usual blend `Σⱼ wᵢⱼ Tⱼ(v)` (weights sum to one) but makes
//! the zero pose an exact fixed point.

mod synth;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rotations::{
    euler_to_matrix, euler_to_matrix_vjp, rot6d_to_matrix, rot6d_to_matrix_vjp, EulerXYZ,
    Rot6D, RotMatrix,
};

pub use synth::{synth_model, ModelDims};

pub type Vec3 = Vector3<f64>;

/// Number of facial landmarks carried by every model.
pub const NUM_LANDMARKS: usize = 68;
/// Rows of the evaluation joint regressor.
pub const NUM_EVAL_JOINTS: usize = 14;

const SUM_TOL: f64 = 1e-9;

/// Named vertex subsets used for part-wise evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartMasks {
    pub body: Vec<usize>,
    pub face: Vec<usize>,
    pub left_hand: Vec<usize>,
    pub right_hand: Vec<usize>,
}

impl PartMasks {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "body" => Some(&self.body),
            "face" => Some(&self.face),
            "left_hand" => Some(&self.left_hand),
            "right_hand" => Some(&self.right_hand),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[usize])> {
        [
            ("body", self.body.as_slice()),
            ("face", self.face.as_slice()),
            ("left_hand", self.left_hand.as_slice()),
            ("right_hand", self.right_hand.as_slice()),
        ]
        .into_iter()
    }
}

/// Designated joints of the skeleton. Any role may be absent on tiny models.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointRoles {
    pub neck: Option<usize>,
    pub head: Option<usize>,
    /// Encoded with Euler angles rather than 6D.
    pub jaw: Option<usize>,
    pub left_wrist: Option<usize>,
    pub right_wrist: Option<usize>,
    /// Joints observed by the body camera.
    pub body_joints: Vec<usize>,
    /// Wrist plus finger joints.
    pub left_hand_joints: Vec<usize>,
    pub right_hand_joints: Vec<usize>,
}

/// A rigid joint transform in pivot form: `x ↦ R (x − pivot) + pivot + displacement`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTransform {
    pub rotation: RotMatrix,
    pub pivot: Vec3,
    pub displacement: Vec3,
}

impl JointTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let r = self.rotation.matrix();
        x + (r - Matrix3::identity()) * (x - self.pivot) + self.displacement
    }

    /// Translation of the equivalent `x ↦ R x + t` form.
    pub fn translation(&self) -> Vec3 {
        self.pivot + self.displacement - self.rotation.matrix() * self.pivot
    }
}

/// Template mesh, linear bases, regressors, skinning weights and skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub template: Vec<Vec3>,
    /// Row-major `(3V) × n_shape`: entry `[(3v + c) * n_shape + k]`.
    pub shape_basis: Vec<f64>,
    pub n_shape: usize,
    /// Row-major `(3V) × n_expr`.
    pub expr_basis: Vec<f64>,
    pub n_expr: usize,
    /// Row-major `J × V`, rows sum to one.
    pub joint_regressor: Vec<f64>,
    /// Row-major `V × J`, rows sum to one.
    pub skin_weights: Vec<f64>,
    /// `parents[0]` is `None`; every other parent index is smaller than the child.
    pub parents: Vec<Option<usize>>,
    pub joint_names: Vec<String>,
    pub roles: JointRoles,
    pub part_masks: PartMasks,
    pub landmark_indices: Vec<usize>,
    /// Pairs of landmark indices (into `0..68`) for the closure loss.
    pub closure_pairs: Vec<(usize, usize)>,
    pub faces: Vec<[usize; 3]>,
    /// Optional `14 × V` evaluation regressor.
    pub eval_regressor: Option<Vec<f64>>,
}

impl BodyModel {
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vertices: self.num_vertices(),
            joints: self.num_joints(),
            n_shape: self.n_shape,
            n_expr: self.n_expr,
        }
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let nv = self.num_vertices();
        let nj = self.num_joints();
        let bad = |m: String| Err(Error::InvalidModel(m));
        if nj == 0 || nv == 0 {
            return bad("empty model".into());
        }
        check_len("shape basis", 3 * nv * self.n_shape, self.shape_basis.len())?;
        check_len("expression basis", 3 * nv * self.n_expr, self.expr_basis.len())?;
        check_len("joint regressor", nj * nv, self.joint_regressor.len())?;
        check_len("skin weights", nv * nj, self.skin_weights.len())?;
        check_len("joint names", nj, self.joint_names.len())?;
        if self.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return bad(format!("joint {j} has invalid parent {p:?}")),
            }
        }
        for (name, rows, cols, data) in [
            ("joint regressor", nj, nv, &self.joint_regressor),
            ("skin weights", nv, nj, &self.skin_weights),
        ] {
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad(format!("{name} row {r} has a negative or non-finite weight"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > SUM_TOL {
                    return bad(format!("{name} row {r} sums to {s}"));
                }
            }
        }
        if let Some(reg) = &self.eval_regressor {
            check_len("evaluation regressor", NUM_EVAL_JOINTS * nv, reg.len())?;
        }
        for (name, mask) in self.part_masks.iter() {
            if let Some(&i) = mask.iter().find(|&&i| i >= nv) {
                return bad(format!("part mask {name} has vertex {i} out of range"));
            }
        }
        check_len("landmarks", NUM_LANDMARKS, self.landmark_indices.len())?;
        if let Some(&i) = self.landmark_indices.iter().find(|&&i| i >= nv) {
            return Err(Error::IndexOutOfRange { index: i, len: nv });
        }
        for &(a, b) in &self.closure_pairs {
            if a >= NUM_LANDMARKS || b >= NUM_LANDMARKS {
                return Err(Error::IndexOutOfRange {
                    index: a.max(b),
                    len: NUM_LANDMARKS,
                });
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i >= nv) {
                return bad(format!("face {f:?} out of range"));
            }
        }
        let roles = &self.roles;
        let joint_refs = [roles.neck, roles.head, roles.jaw, roles.left_wrist, roles.right_wrist];
        for j in joint_refs.into_iter().flatten().chain(
            roles
                .body_joints
                .iter()
                .chain(&roles.left_hand_joints)
                .chain(&roles.right_hand_joints)
                .copied(),
        ) {
            if j >= nj {
                return Err(Error::IndexOutOfRange { index: j, len: nj });
            }
        }
        if !self.template.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return bad("non-finite template".into());
        }
        Ok(())
    }

    /// Children lists derived from the parent array.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_joints()];
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(j);
            }
        }
        out
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// All descendants of `joint`, including itself, in index order.
    pub fn subtree(&self, joint: usize) -> Vec<usize> {
        let mut inside = vec![false; self.num_joints()];
        inside[joint] = true;
        for j in joint + 1..self.num_joints() {
            if let Some(p) = self.parents[j] {
                inside[j] = inside[p];
            }
        }
        (0..self.num_joints()).filter(|&j| inside[j]).collect()
    }
}

/// One joint's local rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum JointRotation {
    SixD(Rot6D),
    Euler(EulerXYZ),
}

impl JointRotation {
    pub fn to_matrix(&self) -> Result<RotMatrix> {
        match self {
            JointRotation::SixD(r) => rot6d_to_matrix(r),
            JointRotation::Euler(e) => euler_to_matrix(e),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            JointRotation::SixD(_) => 6,
            JointRotation::Euler(_) => 3,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn write(&self, out: &mut [f64]) {
        match self {
            JointRotation::SixD(r) => out.copy_from_slice(&r.0),
            JointRotation::Euler(e) => out.copy_from_slice(&e.to_array()),
        }
    }
}

/// Shape, pose and expression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub beta: Vec<f64>,
    pub pose: Vec<JointRotation>,
    pub psi: Vec<f64>,
}

impl Parameters {
    /// Zero shape and expression, identity rotations.
    pub fn zeros(model: &BodyModel) -> Self {
        let pose = (0..model.num_joints())
            .map(|j| {
                if model.roles.jaw == Some(j) {
                    JointRotation::Euler(EulerXYZ::default())
                } else {
                    JointRotation::SixD(Rot6D::IDENTITY)
                }
            })
            .collect();
        Parameters {
            beta: vec![0.0; model.n_shape],
            pose,
            psi: vec![0.0; model.n_expr],
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        check_len("beta", model.n_shape, self.beta.len())?;
        check_len("psi", model.n_expr, self.psi.len())?;
        check_len("pose", model.num_joints(), self.pose.len())?;
        for (j, r) in self.pose.iter().enumerate() {
            let is_jaw = model.roles.jaw == Some(j);
            match (r, is_jaw) {
                (JointRotation::Euler(_), true) | (JointRotation::SixD(_), false) => {}
                _ => {
                    return Err(Error::ConfigInvalid(format!(
                        "joint {j}: jaw must be Euler-encoded and all other joints 6D"
                    )))
                }
            }
        }
        let finite = self.beta.iter().chain(&self.psi).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteComponent("parameters".into()));
        }
        Ok(())
    }

    pub fn local_rotations(&self) -> Result<Vec<RotMatrix>> {
        self.pose.iter().map(JointRotation::to_matrix).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.beta.len() + self.psi.len() + self.pose.iter().map(|r| r.len()).sum::<usize>();
        let mut out = vec![0.0; n];
        out[..self.beta.len()].copy_from_slice(&self.beta);
        let mut o = self.beta.len();
        out[o..o + self.psi.len()].copy_from_slice(&self.psi);
        o += self.psi.len();
        for r in &self.pose {
            r.write(&mut out[o..o + r.len()]);
            o += r.len();
        }
        out
    }

    /// Rebuilds parameters from a flat vector with the layout of `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Parameters> {
        let layout = ParamLayout::of(self);
        check_len("flat parameters", layout.len, flat.len())?;
        let beta = flat[layout.beta.clone()].to_vec();
        let psi = flat[layout.psi.clone()].to_vec();
        let pose = self
            .pose
            .iter()
            .zip(&layout.pose)
            .map(|(r, range)| {
                let s = &flat[range.clone()];
                match r {
                    JointRotation::SixD(_) => JointRotation::SixD(Rot6D(s.try_into().unwrap())),
                    JointRotation::Euler(_) => {
                        JointRotation::Euler(EulerXYZ::from_array(s.try_into().unwrap()))
                    }
                }
            })
            .collect();
        Ok(Parameters { beta, pose, psi })
    }
}

/// Offsets of each parameter block inside the flat vector:
/// `[beta | psi | pose_0 | pose_1 | …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub beta: std::ops::Range<usize>,
    pub psi: std::ops::Range<usize>,
    pub pose: Vec<std::ops::Range<usize>>,
    pub len: usize,
}

impl ParamLayout {
    pub fn of(params: &Parameters) -> Self {
        let nb = params.beta.len();
        let np = params.psi.len();
        let mut o = nb + np;
        let pose = params
            .pose
            .iter()
            .map(|r| {
                let range = o..o + r.len();
                o += r.len();
                range
            })
            .collect();
        ParamLayout {
            beta: 0..nb,
            psi: nb..nb + np,
            pose,
            len: o,
        }
    }
}

/// Output of [`pose_model`]. Keeps the intermediates needed by [`pose_model_vjp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedResult {
    pub vertices: Vec<Vec3>,
    pub joints_rest: Vec<Vec3>,
    pub joints_posed: Vec<Vec3>,
    pub world_transforms: Vec<JointTransform>,
    pub rest_vertices: Vec<Vec3>,
    pub local_rotations: Vec<RotMatrix>,
}

/// Rest mesh: `template + S·β + E·ψ`.
pub fn shape_mesh(model: &BodyModel, beta: &[f64], psi: &[f64]) -> Result<Vec<Vec3>> {
    check_len("beta", model.n_shape, beta.len())?;
    check_len("psi", model.n_expr, psi.len())?;
    let (ns, ne) = (model.n_shape, model.n_expr);
    let out = model
        .template
        .iter()
        .enumerate()
        .map(|(v, t)| {
            let mut p = *t;
            for c in 0..3 {
                let row = 3 * v + c;
                let s = &model.shape_basis[row * ns..(row + 1) * ns];
                let e = &model.expr_basis[row * ne..(row + 1) * ne];
                p[c] += dot(s, beta) + dot(e, psi);
            }
            p
        })
        .collect();
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Applies a row-major `rows × V` regressor to a mesh.
pub(crate) fn apply_regressor(regressor: &[f64], rows: usize, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
    let nv = vertices.len();
    check_len("regressor columns", regressor.len(), rows * nv)?;
    Ok((0..rows)
        .map(|j| {
            regressor[j * nv..(j + 1) * nv]
                .iter()
                .zip(vertices)
                .filter(|(w, _)| **w != 0.0)
                .fold(Vec3::zeros(), |acc, (w, v)| acc + v * *w)
        })
        .collect())
}

/// `joint_regressor · vertices`.
pub fn regress_joints(model: &BodyModel, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
    check_len("vertices", model.num_vertices(), vertices.len())?;
    apply_regressor(&model.joint_regressor, model.num_joints(), vertices)
}

/// Composes local rotations down the tree. Joint `j` rotates about its rest
/// position; its world rotation is `G_parent · R_j`.
pub fn forward_kinematics(
    model: &BodyModel,
    joints_rest: &[Vec3],
    pose: &[RotMatrix],
) -> Result<Vec<JointTransform>> {
    let nj = model.num_joints();
    check_len("rest joints", nj, joints_rest.len())?;
    check_len("pose", nj, pose.len())?;
    let mut out: Vec<JointTransform> = Vec::with_capacity(nj);
    for j in 0..nj {
        let t = match model.parents[j] {
            None => JointTransform {
                rotation: pose[j],
                pivot: joints_rest[j],
                displacement: Vec3::zeros(),
            },
            Some(p) => {
                let parent = &out[p];
                let gp = parent.rotation.matrix();
                let bone = joints_rest[j] - joints_rest[p];
                JointTransform {
                    rotation: parent.rotation.compose(&pose[j]),
                    pivot: joints_rest[j],
                    displacement: (gp - Matrix3::identity()) * bone + parent.displacement,
                }
            }
        };
        out.push(t);
    }
    Ok(out)
}

/// Linear blend skinning of the rest mesh by the joint transforms.
pub fn skin(
    model: &BodyModel,
    vertices_rest: &[Vec3],
    transforms: &[JointTransform],
) -> Result<Vec<Vec3>> {
    let (nv, nj) = (model.num_vertices(), model.num_joints());
    check_len("rest vertices", nv, vertices_rest.len())?;
    check_len("transforms", nj, transforms.len())?;
    let deltas: Vec<Matrix3<f64>> = transforms
        .iter()
        .map(|t| t.rotation.matrix() - Matrix3::identity())
        .collect();
    Ok(vertices_rest
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = &model.skin_weights[i * nj..(i + 1) * nj];
            let mut off = Vec3::zeros();
            for (j, &wij) in w.iter().enumerate() {
                if wij != 0.0 {
                    let t = &transforms[j];
                    off += (deltas[j] * (v - t.pivot) + t.displacement) * wij;
                }
            }
            v + off
        })
        .collect())
}

/// The full body function `M(β, θ, ψ)` together with posed joints.
pub fn pose_model(model: &BodyModel, params: &Parameters) -> Result<PosedResult> {
    params.validate(model)?;
    let rest_vertices = shape_mesh(model, &params.beta, &params.psi)?;
    let joints_rest = regress_joints(model, &rest_vertices)?;
    let local_rotations = params.local_rotations()?;
    let world_transforms = forward_kinematics(model, &joints_rest, &local_rotations)?;
    let vertices = skin(model, &rest_vertices, &world_transforms)?;
    let joints_posed = world_transforms
        .iter()
        .map(|t| t.pivot + t.displacement)
        .collect();
    Ok(PosedResult {
        vertices,
        joints_rest,
        joints_posed,
        world_transforms,
        rest_vertices,
        local_rotations,
    })
}

/// Upstream gradients flowing into [`pose_model_vjp`]. Absent entries are zero.
#[derive(Debug, Clone, Default)]
pub struct PoseUpstream {
    pub vertices: Option<Vec<Vec3>>,
    pub joints: Option<Vec<Vec3>>,
    pub world_rotations: Option<Vec<Matrix3<f64>>>,
}

/// Reverse-mode gradient of `pose_model` outputs, laid out per [`ParamLayout`].
pub fn pose_model_vjp(
    model: &BodyModel,
    params: &Parameters,
    posed: &PosedResult,
    upstream: &PoseUpstream,
) -> Result<Vec<f64>> {
    let (nv, nj) = (model.num_vertices(), model.num_joints());
    let layout = ParamLayout::of(params);
    let mut grad = vec![0.0; layout.len];

    let mut g_rest = vec![Vec3::zeros(); nv];
    let mut g_c = vec![Vec3::zeros(); nj];
    let mut g_d = vec![Vec3::zeros(); nj];
    let mut g_world = match &upstream.world_rotations {
        Some(g) => {
            check_len("world rotation gradients", nj, g.len())?;
            g.clone()
        }
        None => vec![Matrix3::zeros(); nj],
    };

    if let Some(gj) = &upstream.joints {
        check_len("joint gradients", nj, gj.len())?;
        for j in 0..nj {
            g_c[j] += gj[j];
            g_d[j] += gj[j];
        }
    }

    // Skinning.
    if let Some(gv) = &upstream.vertices {
        check_len("vertex gradients", nv, gv.len())?;
        let deltas: Vec<Matrix3<f64>> = posed
            .world_transforms
            .iter()
            .map(|t| t.rotation.matrix() - Matrix3::identity())
            .collect();
        for i in 0..nv {
            let g = gv[i];
            g_rest[i] += g;
            if g == Vec3::zeros() {
                continue;
            }
            let v = posed.rest_vertices[i];
            let w = &model.skin_weights[i * nj..(i + 1) * nj];
            for (j, &wij) in w.iter().enumerate() {
                if wij == 0.0 {
                    continue;
                }
                let t = &posed.world_transforms[j];
                let gw = g * wij;
                let rel = v - t.pivot;
                g_world[j] += gw * rel.transpose();
                let back = deltas[j].transpose() * gw;
                g_rest[i] += back;
                g_c[j] -= back;
                g_d[j] += gw;
            }
        }
    }

    // Forward kinematics, children before parents.
    let mut g_local = vec![Matrix3::zeros(); nj];
    for j in (0..nj).rev() {
        let gw = g_world[j];
        match model.parents[j] {
            None => {
                g_local[j] += gw;
            }
            Some(p) => {
                let parent = &posed.world_transforms[p];
                let gp = *parent.rotation.matrix();
                let local = posed.local_rotations[j].matrix();
                g_world[p] += gw * local.transpose();
                g_local[j] += gp.transpose() * gw;
                let bone = posed.joints_rest[j] - posed.joints_rest[p];
                g_world[p] += g_d[j] * bone.transpose();
                let back = (gp - Matrix3::identity()).transpose() * g_d[j];
                g_c[j] += back;
                g_c[p] -= back;
                let gd = g_d[j];
                g_d[p] += gd;
            }
        }
    }

    // Joint regression.
    for j in 0..nj {
        if g_c[j] == Vec3::zeros() {
            continue;
        }
        let row = &model.joint_regressor[j * nv..(j + 1) * nv];
        for (i, &w) in row.iter().enumerate() {
            if w != 0.0 {
                g_rest[i] += g_c[j] * w;
            }
        }
    }

    // Linear shaping.
    let (ns, ne) = (model.n_shape, model.n_expr);
    for (i, g) in g_rest.iter().enumerate() {
        for c in 0..3 {
            let row = 3 * i + c;
            if g[c] == 0.0 {
                continue;
            }
            for k in 0..ns {
                grad[layout.beta.start + k] += model.shape_basis[row * ns + k] * g[c];
            }
            for k in 0..ne {
                grad[layout.psi.start + k] += model.expr_basis[row * ne + k] * g[c];
            }
        }
    }

    // Rotation encodings.
    for (j, rot) in params.pose.iter().enumerate() {
        let range = layout.pose[j].clone();
        match rot {
            JointRotation::SixD(r) => {
                let g = rot6d_to_matrix_vjp(r, &g_local[j])?;
                grad[range].copy_from_slice(&g);
            }
            JointRotation::Euler(e) => {
                let g = euler_to_matrix_vjp(e, &g_local[j]);
                grad[range].copy_from_slice(&g);
            }
        }
    }
    Ok(grad)
}

/// Rotation relative to the parent chain that realizes the absolute rotation
/// `theta_g`, given the parent's world rotation: `ancestor_worldᵀ · theta_g`.
pub fn global_to_relative(theta_g: &RotMatrix, ancestor_world: &RotMatrix) -> Result<RotMatrix> {
    let g = RotMatrix::new(*theta_g.matrix())?;
    let a = RotMatrix::new(*ancestor_world.matrix())?;
    Ok(a.transpose().compose(&g))
}

/// Recovers every local rotation from world rotations.
pub fn relative_from_world(model: &BodyModel, world: &[RotMatrix]) -> Result<Vec<RotMatrix>> {
    check_len("world rotations", model.num_joints(), world.len())?;
    world
        .iter()
        .enumerate()
        .map(|(j, g)| match model.parents[j] {
            None => Ok(*g),
            Some(p) => global_to_relative(g, &world[p]),
        })
        .collect()
}

/// Replaces joint `joint`'s local rotation so that its world rotation becomes
/// `theta_g` under the current parent chain (e.g. absolute head or wrist
/// orientation predicted independently of the body).
pub fn set_global_rotation(
    model: &BodyModel,
    params: &mut Parameters,
    joint: usize,
    theta_g: &RotMatrix,
) -> Result<()> {
    if joint >= model.num_joints() {
        return Err(Error::IndexOutOfRange {
            index: joint,
            len: model.num_joints(),
        });
    }
    let locals = params.local_rotations()?;
    let mut parent_world = RotMatrix::identity();
    let mut chain = Vec::new();
    let mut cur = model.parents[joint];
    while let Some(p) = cur {
        chain.push(p);
        cur = model.parents[p];
    }
    for &p in chain.iter().rev() {
        parent_world = parent_world.compose(&locals[p]);
    }
    let rel = global_to_relative(theta_g, &parent_world)?;
    params.pose[joint] = match params.pose[joint] {
        JointRotation::SixD(_) => JointRotation::SixD(crate::rotations::matrix_to_rot6d(&rel)?),
        JointRotation::Euler(_) => {
            return Err(Error::ConfigInvalid(
                "cannot assign a global rotation to an Euler-encoded joint".into(),
            ))
        }
    };
    Ok(())
}

/// Named map of per-part vertex masks, handy for metrics.
pub fn masks_map(model: &BodyModel) -> BTreeMap<String, Vec<usize>> {
    model
        .part_masks
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests;
