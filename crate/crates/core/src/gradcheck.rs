//! Finite-difference verification of every analytic gradient.
//!
//! Each check draws seeded random inputs, reduces vector outputs to a
//! scalar with a random upstream, and compares central differences with
//! the analytic gradient entry by entry. Checks over L1 terms skip entries
//! whose one-sided slopes disagree, which marks a kink inside the stencil.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{pose_model, pose_model_vjp, synth_model, BodyModel, ModelDims, Parameters, PoseUpstream, Vec3};
use crate::camera::{project, project_vjp, Vec2, WeakPerspectiveCamera};
use crate::error::{Error, Result};
use crate::fitter::{
    objective, sample_parameters, synthesize_observations, FitCameras, FitProblem, LinearEmbedder, Photometric,
    SplatRenderer,
};
use crate::losses::{self, Image, LandmarkSet, LossWeights, ParamSelection};
use crate::moderator::{self, ModeratorState, Upstream};
use crate::prior::{GaussianClass, Gender, GenderPrior};
use crate::rotations::{self, EulerXYZ, Rot6D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Rotations,
    Camera,
    BodyModel,
    Losses,
    Prior,
    Moderator,
    Objective,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Rotations,
        Suite::Camera,
        Suite::BodyModel,
        Suite::Losses,
        Suite::Prior,
        Suite::Moderator,
        Suite::Objective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Rotations => "rotations",
            Suite::Camera => "camera",
            Suite::BodyModel => "body_model",
            Suite::Losses => "losses",
            Suite::Prior => "prior",
            Suite::Moderator => "moderator",
            Suite::Objective => "objective",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seeds: usize,
    /// Relative error bound per entry.
    pub tol: f64,
    pub step: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seeds: 100,
            tol: 1e-4,
            step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: String,
    pub check: String,
    pub seeds: usize,
    pub entries: usize,
    /// Entries straddling a kink.
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.entries > self.skipped
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    entries: usize,
    skipped: usize,
    failures: usize,
    max_rel: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            entries: self.entries + o.entries,
            skipped: self.skipped + o.skipped,
            failures: self.failures + o.failures,
            max_rel: self.max_rel.max(o.max_rel),
        }
    }
}

/// Compares `analytic` with central differences of `f` at `x`.
fn compare(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], analytic: &[f64], kinked: bool, opts: &GradcheckOptions) -> Result<Tally> {
    let h = opts.step;
    let f0 = f(x)?;
    let atol = 1e-8 * f0.abs().max(1.0);
    let mut t = Tally::default();
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        let fd = (fp - fm) / (2.0 * h);
        t.entries += 1;
        if kinked {
            let (dp, dm) = ((fp - f0) / h, (f0 - fm) / h);
            if (dp - dm).abs() > 1e-2 * fd.abs().max(1.0) {
                t.skipped += 1;
                continue;
            }
        }
        let diff = (fd - analytic[k]).abs();
        let rel = diff / fd.abs().max(analytic[k].abs()).max(atol / opts.tol);
        t.max_rel = t.max_rel.max(rel);
        if rel >= opts.tol {
            t.failures += 1;
        }
    }
    Ok(t)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

fn vec2s(v: &[f64]) -> Vec<Vec2> {
    v.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

fn vec3s(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flat2(v: &[Vec2]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn flat3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// A check: builds inputs from a seed, returns the tally for that seed.
type Check = fn(&mut ChaCha8Rng, &GradcheckOptions) -> Result<Tally>;

fn rot6d(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let x = normals(rng, 6);
    let g = mat(&normals(rng, 9));
    let f = |x: &[f64]| -> Result<f64> {
        let r = rotations::rot6d_to_matrix(&Rot6D(x.try_into().unwrap()))?;
        Ok(r.matrix().component_mul(&g).sum())
    };
    let an = rotations::rot6d_to_matrix_vjp(&Rot6D(x.clone().try_into().unwrap()), &g)?;
    compare(&f, &x, &an, false, o)
}

fn euler(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
    let g = mat(&normals(rng, 9));
    let e = |x: &[f64]| EulerXYZ::new(x[0], x[1], x[2]);
    let f = |x: &[f64]| -> Result<f64> { Ok(rotations::euler_to_matrix(&e(x))?.matrix().component_mul(&g).sum()) };
    let an = rotations::euler_to_matrix_vjp(&e(&x), &g);
    compare(&f, &x, &an, false, o)
}

fn yaw(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let a = [normal(rng), normal(rng), normal(rng)];
    let r = *rotations::axis_angle_to_matrix(&a)?.matrix();
    let x: Vec<f64> = r.transpose().iter().copied().collect();
    let f = |x: &[f64]| -> Result<f64> { Ok(rotations::matrix_yaw(&mat(x))) };
    let an: Vec<f64> = rotations::matrix_yaw_grad(&r).transpose().iter().copied().collect();
    compare(&f, &x, &an, false, o)
}

fn projection(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let n = 7;
    let mut x = normals(rng, 3 * n);
    x.extend([rng.random_range(0.5..3.0), normal(rng), normal(rng)]);
    let u = vec2s(&normals(rng, 2 * n));
    let split = |x: &[f64]| -> Result<(Vec<Vec3>, WeakPerspectiveCamera)> {
        Ok((vec3s(&x[..3 * n]), WeakPerspectiveCamera::new(x[3 * n], [x[3 * n + 1], x[3 * n + 2]])?))
    };
    let f = |x: &[f64]| -> Result<f64> {
        let (p, c) = split(x)?;
        Ok(dot(&flat2(&project(&p, &c)?), &flat2(&u)))
    };
    let (p, c) = split(&x)?;
    let g = project_vjp(&p, &c, &u);
    let mut an = flat3(&g.points);
    an.extend([g.s, g.t[0], g.t[1]]);
    compare(&f, &x, &an, false, o)
}

fn small_model(seed: u64) -> Result<BodyModel> {
    synth_model(seed % 4, ModelDims::new(160, 19, 5, 3))
}

fn random_params(model: &BodyModel, rng: &mut ChaCha8Rng, sigma: f64) -> Result<Parameters> {
    let mut p = sample_parameters(model, &GaussianClass::standard(model.n_shape), sigma, 1.0, rng)?;
    // Off-manifold 6D values exercise the Gram–Schmidt Jacobian too.
    let flat: Vec<f64> = p.to_flat().iter().map(|v| v + 0.05 * normal(rng)).collect();
    p = p.with_flat(&flat)?;
    Ok(p)
}

fn kinematics(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let model = small_model(rng.random())?;
    let p = random_params(&model, rng, 0.5)?;
    let (nv, nj) = (model.num_vertices(), model.num_joints());
    let uv = vec3s(&normals(rng, 3 * nv));
    let uj = vec3s(&normals(rng, 3 * nj));
    let uw: Vec<Matrix3<f64>> = (0..nj).map(|_| mat(&normals(rng, 9))).collect();
    let scalar = |q: &Parameters| -> Result<f64> {
        let r = pose_model(&model, q)?;
        let mut s = dot(&flat3(&r.vertices), &flat3(&uv)) + dot(&flat3(&r.joints_posed), &flat3(&uj));
        for (t, u) in r.world_transforms.iter().zip(&uw) {
            s += t.rotation.matrix().component_mul(u).sum();
        }
        Ok(s)
    };
    let f = |x: &[f64]| scalar(&p.with_flat(x)?);
    let posed = pose_model(&model, &p)?;
    let up = PoseUpstream {
        vertices: Some(uv.clone()),
        joints: Some(uj.clone()),
        world_rotations: Some(uw.clone()),
    };
    let an = pose_model_vjp(&model, &p, &posed, &up)?;
    compare(&f, &p.to_flat(), &an, false, o)
}

fn l1_points(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let n = 9;
    let x = normals(rng, 2 * n);
    let gt = vec2s(&normals(rng, 2 * n));
    let vis: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
    let f = |x: &[f64]| losses::joint_loss_2d(&vec2s(x), &gt, &vis);
    let an = flat2(&losses::joint_loss_2d_grad(&vec2s(&x), &gt, &vis)?.1);
    let mut t = compare(&f, &x, &an, true, o)?;
    let x3 = normals(rng, 3 * n);
    let gt3 = vec3s(&normals(rng, 3 * n));
    let f = |x: &[f64]| losses::joint_loss_3d(&vec3s(x), &gt3);
    let an = flat3(&losses::joint_loss_3d_grad(&vec3s(&x3), &gt3)?.1);
    t = t.merge(compare(&f, &x3, &an, true, o)?);
    Ok(t)
}

fn landmarks(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let n = crate::body_model::NUM_LANDMARKS;
    let x = normals(rng, 2 * n);
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [normal(rng), normal(rng)]).collect();
    let vis = (0..n).map(|_| rng.random_bool(0.9)).collect();
    let gt = LandmarkSet::new(pts, vis)?;
    let pairs: Vec<(usize, usize)> = (0..8).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    let f = |x: &[f64]| losses::landmark_loss(&vec2s(x), &gt);
    let an = flat2(&losses::landmark_loss_grad(&vec2s(&x), &gt)?.1);
    let mut t = compare(&f, &x, &an, true, o)?;
    let f = |x: &[f64]| losses::closure_loss(&vec2s(x), &gt, &pairs);
    let an = flat2(&losses::closure_loss_grad(&vec2s(&x), &gt, &pairs)?.1);
    t = t.merge(compare(&f, &x, &an, true, o)?);
    Ok(t)
}

fn params_loss(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let model = small_model(0)?;
    let p = random_params(&model, rng, 0.5)?;
    let gt = random_params(&model, rng, 0.5)?;
    let joints: Vec<usize> = (0..model.num_joints()).filter(|_| rng.random_bool(0.6)).collect();
    let sel = ParamSelection {
        joints: Some(&joints),
        include_beta: rng.random_bool(0.5),
    };
    let f = |x: &[f64]| Ok(losses::param_loss_grad(&p.with_flat(x)?, &gt, &sel)?.0);
    let an = losses::param_loss_grad(&p, &gt, &sel)?.1;
    compare(&f, &p.to_flat(), &an, false, o)
}

fn photometric(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let (h, w, c) = (4, 5, 3);
    let x = normals(rng, h * w * c);
    let target = Image::new(h, w, c, normals(rng, h * w * c))?;
    let mask = Image::new(h, w, 1, (0..h * w).map(|_| f64::from(u8::from(rng.random_bool(0.7)))).collect())?;
    let img = |x: &[f64]| Image::new(h, w, c, x.to_vec());
    let f = |x: &[f64]| losses::photometric_loss(&target, &img(x)?, &mask);
    let an = losses::photometric_loss_grad(&target, &img(&x)?, &mask)?.1.data;
    compare(&f, &x, &an, true, o)
}

fn identity(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let n = 12;
    let x = normals(rng, 2 * n);
    let f = |x: &[f64]| losses::identity_loss(&x[..n], &x[n..]);
    let (_, ga, gb) = losses::identity_loss_grad(&x[..n], &x[n..])?;
    let an: Vec<f64> = ga.into_iter().chain(gb).collect();
    compare(&f, &x, &an, false, o)
}

fn face_priors(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let psi = normals(rng, 7);
    let f = |x: &[f64]| Ok(losses::expression_prior(x));
    let mut t = compare(&f, &psi, &losses::expression_prior_grad(&psi).1, false, o)?;
    let jaw: Vec<f64> = normals(rng, 3);
    let e = |x: &[f64]| EulerXYZ::new(x[0], x[1], x[2]);
    let f = |x: &[f64]| Ok(losses::jaw_prior(&e(x)));
    t = t.merge(compare(&f, &jaw, &losses::jaw_prior_grad(&e(&jaw)).1, true, o)?);
    let yaw = [rng.random_range(-180.0..180.0)];
    let f = |x: &[f64]| Ok(losses::face_yaw_prior(x[0]));
    t = t.merge(compare(&f, &yaw, &[losses::face_yaw_prior_grad(yaw[0]).1], true, o)?);
    Ok(t)
}

fn shape_prior(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let n = 6;
    let a = nalgebra::DMatrix::from_fn(n, n, |_, _| normal(rng));
    let cov = &a * a.transpose() + nalgebra::DMatrix::identity(n, n) * 0.5;
    let class = GaussianClass::from_mean_cov(normals(rng, n), cov.transpose().iter().copied().collect())?;
    let mut prior = GenderPrior::default();
    let label = [Gender::Female, Gender::Male, Gender::Unknown][rng.random_range(0..3)];
    prior.insert(label, class);
    let beta = normals(rng, n);
    let f = |x: &[f64]| crate::prior::gendered_shape_loss(x, label, &prior);
    let an = crate::prior::gendered_shape_loss_grad(&beta, label, &prior)?.1;
    compare(&f, &beta, &an, false, o)
}

fn moderator_check(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let d = rng.random_range(3..9);
    let mut state = ModeratorState::init(d, rng.random())?;
    state.temperature = rng.random_range(0.5..2.0);
    let body = normals(rng, d);
    let part = normals(rng, d);
    let up = Upstream {
        fused: normals(rng, d),
        body_part: normals(rng, d),
        w: normal(rng),
    };
    let np = state.num_params();
    let scalar = |s: &ModeratorState, b: &[f64], p: &[f64]| -> Result<f64> {
        let (out, _) = moderator::forward(s, b, p)?;
        Ok(dot(&out.fusion.fused, &up.fused) + dot(&out.body_part, &up.body_part) + out.fusion.w * up.w)
    };
    let mut x = state.params_flat();
    x.extend(&body);
    x.extend(&part);
    let f = |x: &[f64]| -> Result<f64> {
        let mut s = state.clone();
        s.set_params_flat(&x[..np])?;
        scalar(&s, &x[np..np + d], &x[np + d..])
    };
    let (_, cache) = moderator::forward(&state, &body, &part)?;
    let g = moderator::backward(&state, &cache, &up)?;
    let mut an = g.params_flat();
    an.extend(&g.body);
    an.extend(&g.part);
    compare(&f, &x, &an, false, o)
}

fn objective_check(rng: &mut ChaCha8Rng, o: &GradcheckOptions) -> Result<Tally> {
    let model = small_model(rng.random())?;
    let truth = random_params(&model, rng, 0.3)?;
    let cam = |rng: &mut ChaCha8Rng| WeakPerspectiveCamera::new(rng.random_range(60.0..140.0), [rng.random_range(90.0..130.0), rng.random_range(90.0..130.0)]);
    let cams = FitCameras {
        body: cam(rng)?,
        face: cam(rng)?,
        hand: cam(rng)?,
    };
    let mut obs = synthesize_observations(&model, &truth, &cams, 2.0, rng.random())?;
    obs.body_joints_3d = Some(pose_model(&model, &truth)?.joints_posed.iter().map(|j| [j.x, j.y, j.z]).collect::<Vec<_>>());
    obs.body_joints_3d.as_mut().unwrap().truncate(model.roles.body_joints.len());
    obs.gender = Some([Gender::Female, Gender::Male, Gender::Unknown][rng.random_range(0..3)]);
    let mut prior = GenderPrior::standard(model.n_shape);
    for g in [Gender::Female, Gender::Male] {
        let mu = normals(rng, model.n_shape);
        prior.insert(g, GaussianClass::from_mean_cov(mu, GaussianClass::standard(model.n_shape).cov)?);
    }
    let weights = LossWeights {
        face_yaw: 1e-3,
        ..Default::default()
    };
    let renderer = SplatRenderer::new(6, 6, 1.5, model.landmark_indices.clone(), 0)?;
    let target = Image::new(6, 6, 3, normals(rng, 108))?;
    let embedder = LinearEmbedder::new(5, 6, 6, 3, 1);
    let mut problem = FitProblem::new(&model, obs, &prior);
    problem.weights = weights;
    problem.param_targets = Some(random_params(&model, rng, 0.3)?);
    if rng.random_bool(0.5) {
        problem.photometric = Some(Photometric {
            target,
            mask: Image::new(6, 6, 1, vec![1.0; 36])?,
            renderer: &renderer,
            embedder: Some(&embedder),
        });
    }
    let p = random_params(&model, rng, 0.3)?;
    let jitter = |c: WeakPerspectiveCamera, rng: &mut ChaCha8Rng| WeakPerspectiveCamera::new(c.s * 1.05, [c.t[0] + normal(rng), c.t[1] + normal(rng)]);
    let start = FitCameras {
        body: jitter(cams.body, rng)?,
        face: jitter(cams.face, rng)?,
        hand: jitter(cams.hand, rng)?,
    };
    let mut x = p.to_flat();
    let np = x.len();
    x.extend(cams_flat(&start));
    let f = |x: &[f64]| -> Result<f64> { Ok(objective(&problem, &p.with_flat(&x[..np])?, &cams_from(&x[np..])?)?.total) };
    let an = objective(&problem, &p, &start)?.grad;
    compare(&f, &x, &an, true, o)
}

fn cams_flat(c: &FitCameras) -> Vec<f64> {
    [c.body, c.face, c.hand].iter().flat_map(|c| [c.s, c.t[0], c.t[1]]).collect()
}

fn cams_from(x: &[f64]) -> Result<FitCameras> {
    let c = |k: usize| WeakPerspectiveCamera::new(x[3 * k], [x[3 * k + 1], x[3 * k + 2]]);
    Ok(FitCameras {
        body: c(0)?,
        face: c(1)?,
        hand: c(2)?,
    })
}

fn checks(suite: Suite) -> Vec<(&'static str, Check)> {
    match suite {
        Suite::Rotations => vec![("rot6d_to_matrix", rot6d), ("euler_to_matrix", euler), ("matrix_yaw", yaw)],
        Suite::Camera => vec![("project", projection)],
        Suite::BodyModel => vec![("pose_model", kinematics)],
        Suite::Losses => vec![
            ("joint_l1", l1_points),
            ("landmarks_and_closure", landmarks),
            ("param_loss", params_loss),
            ("photometric", photometric),
            ("identity", identity),
            ("face_priors", face_priors),
        ],
        Suite::Prior => vec![("gendered_shape", shape_prior)],
        Suite::Moderator => vec![("forward_backward", moderator_check)],
        Suite::Objective => vec![("fit_objective", objective_check)],
    }
}

/// Runs every check of `suite` over `opts.seeds` seeds.
pub fn run_suite(suite: Suite, opts: &GradcheckOptions) -> Result<Vec<CheckReport>> {
    if !(opts.step > 0.0 && opts.tol > 0.0) || opts.seeds == 0 {
        return Err(Error::ConfigInvalid("gradcheck needs seeds > 0, step > 0, tol > 0".into()));
    }
    checks(suite)
        .into_iter()
        .map(|(name, check)| {
            let tallies: Vec<Result<Tally>> = (0..opts.seeds as u64)
                .into_par_iter()
                .map(|seed| check(&mut ChaCha8Rng::seed_from_u64(seed), opts))
                .collect();
            let mut t = Tally::default();
            for r in tallies {
                t = t.merge(r?);
            }
            Ok(CheckReport {
                suite: suite.name().into(),
                check: name.into(),
                seeds: opts.seeds,
                entries: t.entries,
                skipped: t.skipped,
                failures: t.failures,
                max_rel_err: t.max_rel,
            })
        })
        .collect()
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for s in Suite::ALL {
        out.extend(run_suite(s, opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_on_a_few_seeds() {
        let opts = GradcheckOptions {
            seeds: 3,
            ..Default::default()
        };
        for r in run_all(&opts).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let o = GradcheckOptions::default();
        let f = |x: &[f64]| Ok(x[0] * x[0] + x[1]);
        let t = compare(&f, &[1.0, 2.0], &[2.0, 1.0], false, &o).unwrap();
        assert_eq!(t.failures, 0);
        let t = compare(&f, &[1.0, 2.0], &[2.001, 1.0], false, &o).unwrap();
        assert_eq!(t.failures, 1);
    }

    #[test]
    fn kinks_are_skipped_only_when_asked() {
        let o = GradcheckOptions::default();
        let f = |x: &[f64]| Ok(x[0].abs());
        assert_eq!(compare(&f, &[0.0], &[0.0], true, &o).unwrap().skipped, 1);
        let t = compare(&f, &[3e-7], &[1.0], false, &o).unwrap();
        assert_eq!(t.failures, 1);
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()), Some(s));
        }
        assert_eq!(Suite::parse("nope"), None);
    }
}
