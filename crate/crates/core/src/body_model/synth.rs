//! Deterministic synthetic body models for tests and demos.
//!
//! The skeleton is a small humanoid (pelvis, spine, neck, head, jaw, arms
//! with wrists and fingers, legs), truncated or extended to the requested
//! joint count. The mesh is a set of tubes around bones plus a head and jaw
//! volume; vertices are skinned with a smooth distance falloff.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BodyModel, JointRoles, PartMasks, Vec3, NUM_EVAL_JOINTS, NUM_LANDMARKS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vertices: usize,
    pub joints: usize,
    pub n_shape: usize,
    pub n_expr: usize,
}

impl ModelDims {
    pub fn new(vertices: usize, joints: usize, n_shape: usize, n_expr: usize) -> Self {
        ModelDims {
            vertices,
            joints,
            n_shape,
            n_expr,
        }
    }
}

const SKELETON: &[(&str, Option<usize>, [f64; 3])] = &[
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("spine", Some(0), [0.0, 0.28, -0.08]),
    ("neck", Some(1), [0.0, 0.52, 0.02]),
    ("head", Some(2), [0.0, 0.62, 0.04]),
    ("jaw", Some(3), [0.0, 0.60, 0.10]),
    ("left_elbow", Some(1), [0.30, 0.36, 0.08]),
    ("left_wrist", Some(5), [0.52, 0.30, 0.16]),
    ("left_finger", Some(6), [0.62, 0.28, 0.20]),
    ("right_elbow", Some(1), [-0.30, 0.36, 0.06]),
    ("right_wrist", Some(8), [-0.50, 0.28, 0.18]),
    ("right_finger", Some(9), [-0.60, 0.25, 0.22]),
    ("left_knee", Some(0), [0.12, -0.45, 0.14]),
    ("right_knee", Some(0), [-0.12, -0.45, 0.12]),
    ("left_thumb", Some(6), [0.56, 0.24, 0.24]),
    ("right_thumb", Some(9), [-0.54, 0.22, 0.25]),
    ("left_ankle", Some(11), [0.13, -0.88, -0.10]),
    ("right_ankle", Some(12), [-0.13, -0.88, -0.08]),
    ("left_finger_tip", Some(7), [0.70, 0.27, 0.22]),
    ("right_finger_tip", Some(10), [-0.68, 0.24, 0.24]),
];

const CLOSURE_PAIRS: [(usize, usize); 7] = [
    (37, 41),
    (38, 40),
    (43, 47),
    (44, 46),
    (61, 67),
    (62, 66),
    (63, 65),
];

const SKIN_SIGMA: f64 = 0.04;
const REGRESSOR_SIGMA: f64 = 0.05;
const REGRESSOR_SUPPORT: usize = 10;

struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    positions: Vec<Vec3>,
}

fn build_skeleton(joints: usize) -> Skeleton {
    let mut names = Vec::with_capacity(joints);
    let mut parents = Vec::with_capacity(joints);
    let mut positions: Vec<Vec3> = Vec::with_capacity(joints);
    for &(name, parent, p) in SKELETON.iter().take(joints) {
        names.push(name.to_string());
        parents.push(parent);
        positions.push(Vec3::new(p[0], p[1], p[2]));
    }
    // Extra joints extend the finger chains, alternating sides.
    let mut tips = [17usize, 18usize];
    for k in SKELETON.len()..joints {
        let side = k % 2;
        let parent = tips[side];
        let grand = parents[parent].unwrap();
        let dir = (positions[parent] - positions[grand]).normalize();
        names.push(format!("{}_finger_{k}", if side == 0 { "left" } else { "right" }));
        parents.push(Some(parent));
        positions.push(positions[parent] + dir * 0.05);
        tips[side] = k;
    }
    Skeleton {
        names,
        parents,
        positions,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum SegmentKind {
    Bone,
    Tip,
    Face,
}

struct Segment {
    owner: usize,
    start: Vec3,
    end: Vec3,
    radius: f64,
    kind: SegmentKind,
}

fn build_segments(sk: &Skeleton) -> Vec<Segment> {
    let nj = sk.parents.len();
    let mut has_child = vec![false; nj];
    let mut segs = Vec::new();
    for j in 1..nj {
        let p = sk.parents[j].unwrap();
        has_child[p] = true;
        let len = (sk.positions[j] - sk.positions[p]).norm();
        segs.push(Segment {
            owner: p,
            start: sk.positions[p],
            end: sk.positions[j],
            radius: (0.25 * len).clamp(0.015, 0.11),
            kind: SegmentKind::Bone,
        });
    }
    for j in 0..nj {
        let pos = sk.positions[j];
        match sk.names[j].as_str() {
            "head" => segs.push(Segment {
                owner: j,
                start: pos,
                end: pos + Vec3::new(0.0, 0.2, 0.0),
                radius: 0.09,
                kind: SegmentKind::Face,
            }),
            "jaw" => segs.push(Segment {
                owner: j,
                start: pos,
                end: pos + Vec3::new(0.0, -0.05, 0.06),
                radius: 0.04,
                kind: SegmentKind::Face,
            }),
            _ if !has_child[j] => {
                let dir = match sk.parents[j] {
                    Some(p) => (pos - sk.positions[p]).normalize(),
                    None => Vec3::new(0.0, 1.0, 0.0),
                };
                let len = match sk.parents[j] {
                    Some(p) => 0.5 * (pos - sk.positions[p]).norm(),
                    None => 0.2,
                };
                segs.push(Segment {
                    owner: j,
                    start: pos,
                    end: pos + dir * len.max(0.03),
                    radius: (0.4 * len).clamp(0.015, 0.11),
                    kind: SegmentKind::Tip,
                });
            }
            _ => {}
        }
    }
    segs
}

fn frame(axis: &Vec3) -> (Vec3, Vec3) {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = a.cross(&helper).normalize();
    let w = a.cross(&u);
    (u, w)
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Gaussian weights of the `support` nearest vertices to `center`, normalized.
fn local_regressor_row(vertices: &[Vec3], center: &Vec3, support: usize, out: &mut [f64]) {
    let mut order: Vec<(f64, usize)> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| ((v - center).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let picked = &order[..support.min(order.len())];
    let d0 = picked[0].0;
    let s2 = REGRESSOR_SIGMA * REGRESSOR_SIGMA;
    let raw: Vec<f64> = picked.iter().map(|(d, _)| (-(d - d0) / s2).exp()).collect();
    let total: f64 = raw.iter().sum();
    for ((_, i), w) in picked.iter().zip(raw) {
        out[*i] = w / total;
    }
}

fn smooth_field(rng: &mut ChaCha8Rng, amplitude: f64) -> impl Fn(&Vec3) -> Vec3 {
    let waves: Vec<(Vec3, f64, Vec3)> = (0..3)
        .map(|_| {
            let omega = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
            let phase = rng.random_range(0.0..TAU);
            let amp = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
                * (amplitude / 3f64.sqrt());
            (omega, phase, amp)
        })
        .collect();
    move |x: &Vec3| {
        waves
            .iter()
            .fold(Vec3::zeros(), |acc, (o, ph, a)| acc + a * (o.dot(x) + ph).sin())
    }
}

/// Builds a deterministic synthetic model. Requires `V ≥ J ≥ 2`.
pub fn synth_model(seed: u64, dims: ModelDims) -> Result<BodyModel> {
    let ModelDims {
        vertices: nv,
        joints: nj,
        n_shape,
        n_expr,
    } = dims;
    if nj < 2 || nv < nj {
        return Err(Error::InvalidDims(format!(
            "need V >= J >= 2, got V={nv}, J={nj}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sk = build_skeleton(nj);
    let segs = build_segments(&sk);
    let nseg = segs.len();

    // Vertex budget: rings of `ring` vertices, face volumes weighted up.
    let mut template: Vec<Vec3> = Vec::with_capacity(nv);
    let mut vertex_seg: Vec<usize> = Vec::with_capacity(nv);
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let ring = (nv / (2 * nseg)).clamp(3, 8);
    let use_rings = nv >= ring * nseg;
    let mut rings_per_seg = vec![0usize; nseg];
    let mut leftover = nv;
    if use_rings {
        let total_rings = nv / ring;
        leftover = nv - total_rings * ring;
        let weight: Vec<f64> = segs
            .iter()
            .map(|s| {
                let w = (s.end - s.start).norm() * s.radius.sqrt();
                if s.kind == SegmentKind::Face {
                    w * 6.0
                } else {
                    w
                }
            })
            .collect();
        let wsum: f64 = weight.iter().sum();
        rings_per_seg.iter_mut().for_each(|r| *r = 1);
        let extra = total_rings - nseg;
        let mut assigned = 0;
        for (s, w) in weight.iter().enumerate() {
            let k = ((extra as f64) * w / wsum).floor() as usize;
            rings_per_seg[s] += k;
            assigned += k;
        }
        // Remainder round-robin over the heaviest segments.
        let mut by_weight: Vec<usize> = (0..nseg).collect();
        by_weight.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
        for i in 0..(extra - assigned) {
            rings_per_seg[by_weight[i % nseg]] += 1;
        }
    }

    let mut last_ring: Vec<Option<usize>> = vec![None; nseg];
    let mut first_ring: Vec<Option<usize>> = vec![None; nseg];
    for (s, seg) in segs.iter().enumerate() {
        let axis = seg.end - seg.start;
        let (u, w) = frame(&axis);
        let k = rings_per_seg[s];
        for r in 0..k {
            let t = (r as f64 + 0.5) / k as f64;
            let center = seg.start + axis * t;
            let base = template.len();
            let twist = rng.random_range(0.0..TAU);
            for m in 0..ring {
                let phi = twist + TAU * m as f64 / ring as f64 + rng.random_range(-0.1..0.1);
                let rad = seg.radius * (1.0 + rng.random_range(-0.1..0.1));
                template.push(center + (u * phi.cos() + w * phi.sin()) * rad);
                vertex_seg.push(s);
            }
            if r > 0 {
                let prev = base - ring;
                for m in 0..ring {
                    let n = (m + 1) % ring;
                    faces.push([prev + m, prev + n, base + m]);
                    faces.push([prev + n, base + n, base + m]);
                }
            } else {
                first_ring[s] = Some(base);
            }
            last_ring[s] = Some(base);
        }
    }
    // Leftover vertices become caps (fans), then free points.
    let mut caps: Vec<(usize, bool)> = (0..nseg)
        .filter(|&s| last_ring[s].is_some())
        .map(|s| (s, true))
        .collect();
    caps.extend((0..nseg).filter(|&s| first_ring[s].is_some()).map(|s| (s, false)));
    let mut cap_iter = caps.into_iter();
    for i in 0..leftover {
        let idx = template.len();
        match cap_iter.next() {
            Some((s, at_end)) => {
                let seg = &segs[s];
                let axis = (seg.end - seg.start).normalize();
                let (pos, ring_base) = if at_end {
                    (seg.end + axis * seg.radius * 0.5, last_ring[s].unwrap())
                } else {
                    (seg.start - axis * seg.radius * 0.5, first_ring[s].unwrap())
                };
                template.push(pos);
                vertex_seg.push(s);
                for m in 0..ring {
                    let n = (m + 1) % ring;
                    if at_end {
                        faces.push([ring_base + m, ring_base + n, idx]);
                    } else {
                        faces.push([ring_base + n, ring_base + m, idx]);
                    }
                }
            }
            None => {
                let s = i % nseg;
                let seg = &segs[s];
                let t = rng.random_range(0.0..1.0);
                let jitter = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * seg.radius;
                template.push(seg.start + (seg.end - seg.start) * t + jitter);
                vertex_seg.push(s);
                // Attach to the surface so every vertex belongs to a face.
                if let Some(rb) = first_ring[s] {
                    faces.push([rb + i % ring, rb + (i + 1) % ring, idx]);
                } else if idx >= 2 {
                    faces.push([idx - 2, idx - 1, idx]);
                }
            }
        }
    }
    debug_assert_eq!(template.len(), nv);
    // Close single-ring segments so their vertices lie on the surface.
    for s in 0..nseg {
        if let (1, Some(rb)) = (rings_per_seg[s], first_ring[s]) {
            for m in 1..ring - 1 {
                faces.push([rb, rb + m, rb + m + 1]);
            }
        }
    }

    // Skinning weights: smooth falloff in distance to each joint's segments.
    let mut skin_weights = vec![0.0; nv * nj];
    let s2 = SKIN_SIGMA * SKIN_SIGMA;
    for (i, v) in template.iter().enumerate() {
        let mut dist2 = vec![f64::INFINITY; nj];
        for seg in &segs {
            let d = point_segment_distance(v, &seg.start, &seg.end);
            dist2[seg.owner] = dist2[seg.owner].min(d * d);
        }
        // The vertex's own segment dominates even when volumes overlap.
        let own = segs[vertex_seg[i]].owner;
        dist2[own] = dist2[own].min(dist2.iter().copied().fold(f64::INFINITY, f64::min));
        let dmin = dist2[own];
        let row = &mut skin_weights[i * nj..(i + 1) * nj];
        for (w, d) in row.iter_mut().zip(&dist2) {
            let x = (-(d - dmin) / s2).exp();
            *w = if x < 1e-6 { 0.0 } else { x };
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
    }

    let mut joint_regressor = vec![0.0; nj * nv];
    for j in 0..nj {
        local_regressor_row(
            &template,
            &sk.positions[j],
            REGRESSOR_SUPPORT,
            &mut joint_regressor[j * nv..(j + 1) * nv],
        );
    }
    let mut eval_regressor = vec![0.0; NUM_EVAL_JOINTS * nv];
    for r in 0..NUM_EVAL_JOINTS {
        let j = r % nj;
        let center = match sk.parents[j] {
            Some(p) if r >= nj => (sk.positions[j] + sk.positions[p]) * 0.5,
            _ => sk.positions[j],
        };
        local_regressor_row(
            &template,
            &center,
            REGRESSOR_SUPPORT,
            &mut eval_regressor[r * nv..(r + 1) * nv],
        );
    }

    // Roles and part masks.
    let find = |name: &str| sk.names.iter().position(|n| n == name);
    let subtree = |root: Option<usize>| -> Vec<usize> {
        let Some(root) = root else { return Vec::new() };
        let mut inside = vec![false; nj];
        inside[root] = true;
        for j in root + 1..nj {
            if let Some(p) = sk.parents[j] {
                inside[j] = inside[p];
            }
        }
        (0..nj).filter(|&j| inside[j]).collect()
    };
    let left_wrist = find("left_wrist");
    let right_wrist = find("right_wrist");
    let jaw = find("jaw");
    let left_hand_joints = subtree(left_wrist);
    let right_hand_joints = subtree(right_wrist);
    let body_joints: Vec<usize> = (0..nj)
        .filter(|&j| {
            Some(j) != jaw
                && (Some(j) == left_wrist
                    || Some(j) == right_wrist
                    || !(left_hand_joints.contains(&j) || right_hand_joints.contains(&j)))
        })
        .collect();
    let roles = JointRoles {
        neck: find("neck"),
        head: find("head"),
        jaw,
        left_wrist,
        right_wrist,
        body_joints,
        left_hand_joints: left_hand_joints.clone(),
        right_hand_joints: right_hand_joints.clone(),
    };
    let mut masks = PartMasks::default();
    for (i, &s) in vertex_seg.iter().enumerate() {
        let seg = &segs[s];
        if seg.kind == SegmentKind::Face {
            masks.face.push(i);
        } else if left_hand_joints.contains(&seg.owner) {
            masks.left_hand.push(i);
        } else if right_hand_joints.contains(&seg.owner) {
            masks.right_hand.push(i);
        } else {
            masks.body.push(i);
        }
    }

    // Landmarks: front-most face vertices, cycling when there are fewer than 68.
    let mut candidates: Vec<usize> = if masks.face.is_empty() {
        (0..nv).collect()
    } else {
        masks.face.clone()
    };
    candidates.sort_by(|&a, &b| template[b].z.total_cmp(&template[a].z).then(a.cmp(&b)));
    candidates.truncate(NUM_LANDMARKS);
    candidates.sort_unstable();
    let landmark_indices: Vec<usize> = (0..NUM_LANDMARKS)
        .map(|k| candidates[k % candidates.len()])
        .collect();

    // Linear bases.
    let mut shape_basis = vec![0.0; 3 * nv * n_shape];
    for k in 0..n_shape {
        let field = smooth_field(&mut rng, 0.03);
        for (i, v) in template.iter().enumerate() {
            let mut d = field(v);
            if k == 0 {
                d += v * 0.05;
            }
            for c in 0..3 {
                shape_basis[(3 * i + c) * n_shape + k] = d[c];
            }
        }
    }
    let mut expr_basis = vec![0.0; 3 * nv * n_expr];
    for k in 0..n_expr {
        let field = smooth_field(&mut rng, 0.01);
        for &i in &masks.face {
            let d = field(&template[i]);
            for c in 0..3 {
                expr_basis[(3 * i + c) * n_expr + k] = d[c];
            }
        }
    }

    let model = BodyModel {
        template,
        shape_basis,
        n_shape,
        expr_basis,
        n_expr,
        joint_regressor,
        skin_weights,
        parents: sk.parents,
        joint_names: sk.names,
        roles,
        part_masks: masks,
        landmark_indices,
        closure_pairs: CLOSURE_PAIRS.to_vec(),
        faces,
        eval_regressor: Some(eval_regressor),
    };
    model.validate()?;
    Ok(model)
}
