//! Evaluation metrics: alignment, MPJPE, V2V, point-to-surface and F-score.
//!
//! All distances are in model units. `EvalReport::scaled` converts to other
//! units (for example millimetres) after the fact.

mod p2s;

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{apply_regressor, PartMasks, Vec3, NUM_EVAL_JOINTS};
use crate::error::{check_len, Error, Result};
use crate::rotations::RotMatrix;

pub use p2s::{closest_point_on_triangle, distance_brute_force, point_triangle_distance_sq, Bvh, TriMesh};

/// Environment variable capping batch-evaluation worker threads.
pub const THREADS_ENV: &str = "BODYFIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignKind {
    Pa,
    Tr,
}

/// `x ↦ s·R·x + t`, applied to predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub kind: AlignKind,
    pub s: f64,
    pub r: RotMatrix,
    pub t: Vec3,
}

impl Alignment {
    pub fn identity(kind: AlignKind) -> Self {
        Alignment {
            kind,
            s: 1.0,
            r: RotMatrix::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.r.matrix() * p * self.s + self.t
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply_point(p)).collect()
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Similarity transform minimizing `Σ‖s·R·src + t − dst‖²` (Umeyama), with
/// the determinant correction that keeps `R` proper.
pub fn procrustes_align(source: &[Vec3], target: &[Vec3]) -> Result<Alignment> {
    check_len("procrustes target", source.len(), target.len())?;
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("need at least 3 points, got {n}")));
    }
    let mu_s = centroid(source);
    let mu_t = centroid(target);
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let xs = s - mu_s;
        let xt = t - mu_t;
        cov += xt * xs.transpose();
        scatter += xs * xs.transpose();
        var_s += xs.norm_squared();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateConfiguration("source points are collinear or coincident".into()));
    }
    cov /= n as f64;
    var_s /= n as f64;
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s;
    let t = mu_t - r * mu_s * s;
    let r = RotMatrix::new(r).map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;
    Ok(Alignment {
        kind: AlignKind::Pa,
        s,
        r,
        t,
    })
}

/// Centroid-matching translation.
pub fn translation_align(source: &[Vec3], target: &[Vec3]) -> Result<Alignment> {
    check_len("translation target", source.len(), target.len())?;
    if source.is_empty() {
        return Err(Error::DegenerateConfiguration("no points".into()));
    }
    Ok(Alignment {
        t: centroid(target) - centroid(source),
        ..Alignment::identity(AlignKind::Tr)
    })
}

pub fn align(kind: AlignKind, source: &[Vec3], target: &[Vec3]) -> Result<Alignment> {
    match kind {
        AlignKind::Pa => procrustes_align(source, target),
        AlignKind::Tr => translation_align(source, target),
    }
}

/// Mean Euclidean distance after applying `alignment` to `pred`.
pub fn mean_aligned_distance(pred: &[Vec3], gt: &[Vec3], alignment: &Alignment) -> Result<f64> {
    check_len("point count", gt.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::DegenerateConfiguration("no points".into()));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (alignment.apply_point(p) - g).norm())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean per-joint position error under `kind` alignment.
pub fn mpjpe(pred: &[Vec3], gt: &[Vec3], kind: AlignKind) -> Result<f64> {
    check_len("joint count", gt.len(), pred.len())?;
    mean_aligned_distance(pred, gt, &align(kind, pred, gt)?)
}

/// 14 evaluation joints from a vertex set.
pub fn regress_eval_joints(vertices: &[Vec3], regressor: &[f64]) -> Result<Vec<Vec3>> {
    apply_regressor(regressor, NUM_EVAL_JOINTS, vertices)
}

fn gather(points: &[Vec3], idx: &[usize]) -> Result<Vec<Vec3>> {
    idx.iter()
        .map(|&i| {
            points
                .get(i)
                .copied()
                .ok_or(Error::IndexOutOfRange { index: i, len: points.len() })
        })
        .collect()
}

/// Mean per-vertex error. With a mask, the alignment is recomputed on the
/// masked subset before measuring.
pub fn v2v(pred: &[Vec3], gt: &[Vec3], kind: AlignKind, mask: Option<&[usize]>) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::TopologyMismatch(format!(
            "{} predicted vs {} ground-truth vertices",
            pred.len(),
            gt.len()
        )));
    }
    match mask {
        None => mean_aligned_distance(pred, gt, &align(kind, pred, gt)?),
        Some(m) => {
            let p = gather(pred, m)?;
            let g = gather(gt, m)?;
            mean_aligned_distance(&p, &g, &align(kind, &p, &g)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2sStats {
    pub mean: f64,
    pub median: f64,
}

/// Distances from each ground-truth point to the aligned predicted surface.
pub fn p2s_distances(gt_points: &[Vec3], pred: &TriMesh, alignment: &Alignment) -> Result<Vec<f64>> {
    let aligned = TriMesh {
        vertices: alignment.apply(&pred.vertices),
        faces: pred.faces.clone(),
    };
    let bvh = Bvh::build(&aligned)?;
    Ok(gt_points.iter().map(|p| bvh.distance(p)).collect())
}

/// Mean and lower median of [`p2s_distances`].
pub fn p2s(gt_points: &[Vec3], pred: &TriMesh, alignment: &Alignment) -> Result<P2sStats> {
    let mut d = p2s_distances(gt_points, pred, alignment)?;
    if d.is_empty() {
        return Err(Error::DegenerateConfiguration("no ground-truth points".into()));
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    Ok(P2sStats {
        mean,
        median: d[(d.len() - 1) / 2],
    })
}

fn nearest_sq(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

/// Harmonic mean of precision (pred points within `tau` of gt) and recall
/// (gt points within `tau` of pred).
pub fn f_score(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::ConfigInvalid(format!("F-score threshold must be positive, got {tau}")));
    }
    if pred.is_empty() || gt.is_empty() {
        return Ok(0.0);
    }
    let t2 = tau * tau;
    let hits = |a: &[Vec3], b: &[Vec3]| a.iter().filter(|p| nearest_sq(p, b) <= t2).count() as f64 / a.len() as f64;
    let precision = hits(pred, gt);
    let recall = hits(gt, pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub joints: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartValues {
    pub all: f64,
    pub body: f64,
    pub lhand: f64,
    pub rhand: f64,
    pub face: f64,
}

impl PartValues {
    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        PartValues {
            all: f(self.all),
            body: f(self.body),
            lhand: f(self.lhand),
            rhand: f(self.rhand),
            face: f(self.face),
        }
    }

    fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("all", self.all),
            ("body", self.body),
            ("lhand", self.lhand),
            ("rhand", self.rhand),
            ("face", self.face),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// F-score thresholds, model units.
    pub taus: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { taus: vec![0.005, 0.01] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pa_v2v: PartValues,
    pub tr_v2v: PartValues,
    pub pa_mpjpe: Option<f64>,
    pub tr_mpjpe: Option<f64>,
    pub pa_p2s: P2sStats,
    /// Threshold (model units) → PA F-score.
    pub f_score: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Multiplies every distance (and threshold) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EvalReport {
            pa_v2v: self.pa_v2v.map(|x| x * factor),
            tr_v2v: self.tr_v2v.map(|x| x * factor),
            pa_mpjpe: self.pa_mpjpe.map(|x| x * factor),
            tr_mpjpe: self.tr_mpjpe.map(|x| x * factor),
            pa_p2s: P2sStats {
                mean: self.pa_p2s.mean * factor,
                median: self.pa_p2s.median * factor,
            },
            f_score: self.f_score.iter().map(|&(t, f)| (t * factor, f)).collect(),
        }
    }

    /// Flat `(column, value)` pairs; column names follow the field names.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (prefix, vals) in [("pa_v2v", &self.pa_v2v), ("tr_v2v", &self.tr_v2v)] {
            for (k, v) in vals.fields() {
                out.push((format!("{prefix}_{k}"), v));
            }
        }
        out.push(("pa_mpjpe".into(), self.pa_mpjpe.unwrap_or(f64::NAN)));
        out.push(("tr_mpjpe".into(), self.tr_mpjpe.unwrap_or(f64::NAN)));
        out.push(("pa_p2s_mean".into(), self.pa_p2s.mean));
        out.push(("pa_p2s_median".into(), self.pa_p2s.median));
        for &(t, f) in &self.f_score {
            out.push((format!("f_score@{t}"), f));
        }
        out
    }
}

/// Every report field for one prediction / ground-truth pair.
pub fn evaluate(pred: &EvalMesh, gt: &EvalMesh, masks: &PartMasks, opts: &EvalOptions) -> Result<EvalReport> {
    let part = |kind: AlignKind| -> Result<PartValues> {
        let m = |mask: &[usize]| v2v(&pred.vertices, &gt.vertices, kind, Some(mask));
        Ok(PartValues {
            all: v2v(&pred.vertices, &gt.vertices, kind, None)?,
            body: m(&masks.body)?,
            lhand: m(&masks.left_hand)?,
            rhand: m(&masks.right_hand)?,
            face: m(&masks.face)?,
        })
    };
    let (pa_mpjpe, tr_mpjpe) = if pred.joints.is_empty() && gt.joints.is_empty() {
        (None, None)
    } else {
        (
            Some(mpjpe(&pred.joints, &gt.joints, AlignKind::Pa)?),
            Some(mpjpe(&pred.joints, &gt.joints, AlignKind::Tr)?),
        )
    };
    let pa = procrustes_align(&pred.vertices, &gt.vertices)?;
    let mesh = TriMesh {
        vertices: pred.vertices.clone(),
        faces: pred.faces.clone(),
    };
    let aligned = pa.apply(&pred.vertices);
    let f_score = opts
        .taus
        .iter()
        .map(|&t| Ok((t, f_score(&aligned, &gt.vertices, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        pa_v2v: part(AlignKind::Pa)?,
        tr_v2v: part(AlignKind::Tr)?,
        pa_mpjpe,
        tr_mpjpe,
        pa_p2s: p2s(&gt.vertices, &mesh, &pa)?,
        f_score,
    })
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Evaluates every pair in parallel; output order matches input order.
pub fn evaluate_batch(
    pairs: &[(EvalMesh, EvalMesh)],
    masks: &PartMasks,
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    pool.install(|| pairs.par_iter().map(|(p, g)| evaluate(p, g, masks, opts)).collect())
}

/// Field-wise mean, summed in input order.
pub fn mean_report(reports: &[EvalReport]) -> Option<EvalReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for r in reports {
        for (i, (_, v)) in r.columns().into_iter().enumerate() {
            *cols.entry(i).or_insert(0.0) += v;
        }
    }
    let avg = |i: usize| cols[&i] / n;
    let pv = |o: usize| PartValues {
        all: avg(o),
        body: avg(o + 1),
        lhand: avg(o + 2),
        rhand: avg(o + 3),
        face: avg(o + 4),
    };
    let opt = |i: usize| first.pa_mpjpe.map(|_| avg(i));
    Some(EvalReport {
        pa_v2v: pv(0),
        tr_v2v: pv(5),
        pa_mpjpe: opt(10),
        tr_mpjpe: opt(11),
        pa_p2s: P2sStats {
            mean: avg(12),
            median: avg(13),
        },
        f_score: first
            .f_score
            .iter()
            .enumerate()
            .map(|(k, &(t, _))| (t, avg(14 + k)))
            .collect(),
    })
}

/// Length of the axis-aligned bounding-box diagonal.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}
