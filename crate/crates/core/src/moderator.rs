//! Confidence-weighted fusion of a body feature and a part-expert feature.
//!
//! ```text
//! F_b^p = W F_b + b
//! w     = sigmoid(t · M(F_b^p, F_p))        M: [2d → h → 1], tanh hidden
//! fused = w F_b^p + (1 − w) F_p
//! ```
//!
//! `w` is the weight on the body-derived feature, so a part expert is
//! trusted when `w` falls below the confidence threshold. Gradients are
//! computed by hand; a forward cache is tied to the exact parameter values
//! it was produced with.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::update_loss;
use crate::optim::{Adam, AdamConfig};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

pub fn hidden_width(dim: usize) -> usize {
    (dim / 4).max(8)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Extractor, gating MLP and temperature. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorState {
    pub dim: usize,
    pub hidden: usize,
    /// `dim × dim`
    pub extractor_w: Vec<f64>,
    pub extractor_b: Vec<f64>,
    /// `hidden × 2·dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden`
    pub w2: Vec<f64>,
    pub b2: f64,
    pub temperature: f64,
}

impl ModeratorState {
    /// Weights and biases uniform in `±1/√fan_in`, temperature 1.
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ConfigInvalid("feature dimension must be positive".into()));
        }
        let hidden = hidden_width(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        Ok(ModeratorState {
            dim,
            hidden,
            extractor_w: uniform(dim * dim, dim),
            extractor_b: uniform(dim, dim),
            w1: uniform(hidden * 2 * dim, 2 * dim),
            b1: uniform(hidden, 2 * dim),
            w2: uniform(hidden, hidden),
            b2: uniform(1, hidden)[0],
            temperature: 1.0,
        })
    }

    /// Identity extractor, zero MLP, temperature 1.
    pub fn identity(dim: usize) -> Self {
        let hidden = hidden_width(dim);
        let mut extractor_w = vec![0.0; dim * dim];
        for i in 0..dim {
            extractor_w[i * dim + i] = 1.0;
        }
        ModeratorState {
            dim,
            hidden,
            extractor_w,
            extractor_b: vec![0.0; dim],
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim, self.hidden);
        if d == 0 || h == 0 {
            return Err(Error::ConfigInvalid("moderator dimensions must be positive".into()));
        }
        check_len("extractor weight", d * d, self.extractor_w.len())?;
        check_len("extractor bias", d, self.extractor_b.len())?;
        check_len("mlp hidden weight", h * 2 * d, self.w1.len())?;
        check_len("mlp hidden bias", h, self.b1.len())?;
        check_len("mlp output weight", h, self.w2.len())?;
        if !self.params_flat().iter().all(|x| x.is_finite()) {
            return Err(Error::ConfigInvalid("non-finite moderator parameter".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.dim * self.dim + self.dim + self.hidden * 2 * self.dim + 2 * self.hidden + 2
    }

    /// `[extractor_w | extractor_b | w1 | b1 | w2 | b2 | temperature]`
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.extractor_w);
        out.extend_from_slice(&self.extractor_b);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out.push(self.temperature);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("moderator parameters", self.num_params(), flat.len())?;
        let mut rest = flat;
        for dst in [
            &mut self.extractor_w,
            &mut self.extractor_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        self.b2 = rest[0];
        self.temperature = rest[1];
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        self.hidden.hash(&mut h);
        for x in self.params_flat() {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub w: f64,
    pub fused: Vec<f64>,
}

impl FusionOutput {
    pub fn part_expert_trusted(&self, threshold: f64) -> bool {
        self.w < threshold
    }
}

/// `W F_b + b`.
pub fn extract(state: &ModeratorState, body: &[f64]) -> Result<Vec<f64>> {
    let d = state.dim;
    check_len("body feature", d, body.len())?;
    Ok((0..d)
        .map(|i| {
            let row = &state.extractor_w[i * d..(i + 1) * d];
            state.extractor_b[i] + row.iter().zip(body).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    fingerprint: u64,
    input: Vec<f64>,
    hidden: Vec<f64>,
    score: f64,
}

/// Gating score of a `2d` input.
pub fn mlp_forward(state: &ModeratorState, input: &[f64]) -> Result<(f64, MlpCache)> {
    let n = 2 * state.dim;
    check_len("moderator input", n, input.len())?;
    let hidden: Vec<f64> = (0..state.hidden)
        .map(|k| {
            let row = &state.w1[k * n..(k + 1) * n];
            (state.b1[k] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()).tanh()
        })
        .collect();
    let score = state.b2 + state.w2.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    let cache = MlpCache {
        fingerprint: state.fingerprint(),
        input: input.to_vec(),
        hidden,
        score,
    };
    Ok((score, cache))
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Gate on the concatenation `(F_b^p, F_p)` and blend.
pub fn fuse(state: &ModeratorState, body_part: &[f64], part: &[f64]) -> Result<FusionOutput> {
    Ok(fuse_cached(state, body_part, part)?.0)
}

fn fuse_cached(state: &ModeratorState, body_part: &[f64], part: &[f64]) -> Result<(FusionOutput, MlpCache)> {
    check_len("body-part feature", state.dim, body_part.len())?;
    check_len("part feature", state.dim, part.len())?;
    let (score, cache) = mlp_forward(state, &concat(body_part, part))?;
    let w = sigmoid(state.temperature * score);
    let fused = body_part
        .iter()
        .zip(part)
        .map(|(a, b)| w * a + (1.0 - w) * b)
        .collect();
    Ok((FusionOutput { w, fused }, cache))
}

/// Everything needed to backpropagate through [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    body: Vec<f64>,
    body_part: Vec<f64>,
    part: Vec<f64>,
    w: f64,
    mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub body_part: Vec<f64>,
    pub fusion: FusionOutput,
}

/// Extract, gate and fuse in one pass.
pub fn forward(state: &ModeratorState, body: &[f64], part: &[f64]) -> Result<(ForwardOutput, ForwardCache)> {
    let body_part = extract(state, body)?;
    let (fusion, mlp) = fuse_cached(state, &body_part, part)?;
    let cache = ForwardCache {
        body: body.to_vec(),
        body_part: body_part.clone(),
        part: part.to_vec(),
        w: fusion.w,
        mlp,
    };
    Ok((ForwardOutput { body_part, fusion }, cache))
}

/// Upstream gradients of a scalar loss with respect to the forward outputs.
/// `body_part` and `w` are direct dependencies, in addition to the path
/// through `fused`.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub fused: Vec<f64>,
    pub body_part: Vec<f64>,
    pub w: f64,
}

impl Upstream {
    pub fn zeros(dim: usize) -> Self {
        Upstream {
            fused: vec![0.0; dim],
            body_part: vec![0.0; dim],
            w: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeratorGrads {
    pub extractor_w: Vec<f64>,
    pub extractor_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub temperature: f64,
    pub body: Vec<f64>,
    pub part: Vec<f64>,
}

impl ModeratorGrads {
    /// Same order as [`ModeratorState::params_flat`].
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.extractor_w);
        out.extend_from_slice(&self.extractor_b);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out.push(self.temperature);
        out
    }
}

pub fn backward(state: &ModeratorState, cache: &ForwardCache, upstream: &Upstream) -> Result<ModeratorGrads> {
    if cache.mlp.fingerprint != state.fingerprint() {
        return Err(Error::StaleCache);
    }
    let (d, h) = (state.dim, state.hidden);
    check_len("fused gradient", d, upstream.fused.len())?;
    check_len("body-part gradient", d, upstream.body_part.len())?;
    let w = cache.w;

    let mut g_w = upstream.w;
    let mut g_bp = vec![0.0; d];
    let mut g_p = vec![0.0; d];
    for i in 0..d {
        let gf = upstream.fused[i];
        g_w += gf * (cache.body_part[i] - cache.part[i]);
        g_bp[i] = w * gf + upstream.body_part[i];
        g_p[i] = (1.0 - w) * gf;
    }

    let score = cache.mlp.score;
    let g_z = g_w * w * (1.0 - w);
    let g_t = g_z * score;
    let g_score = g_z * state.temperature;

    let n = 2 * d;
    let mut g_w1 = vec![0.0; h * n];
    let mut g_b1 = vec![0.0; h];
    let mut g_w2 = vec![0.0; h];
    let mut g_x = vec![0.0; n];
    for k in 0..h {
        let a = cache.mlp.hidden[k];
        g_w2[k] = g_score * a;
        let g_a = g_score * state.w2[k] * (1.0 - a * a);
        g_b1[k] = g_a;
        if g_a != 0.0 {
            for j in 0..n {
                g_w1[k * n + j] = g_a * cache.mlp.input[j];
                g_x[j] += g_a * state.w1[k * n + j];
            }
        }
    }
    for i in 0..d {
        g_bp[i] += g_x[i];
        g_p[i] += g_x[d + i];
    }

    let mut g_ew = vec![0.0; d * d];
    let mut g_body = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            g_ew[i * d + j] = g_bp[i] * cache.body[j];
            g_body[j] += g_bp[i] * state.extractor_w[i * d + j];
        }
    }

    Ok(ModeratorGrads {
        extractor_w: g_ew,
        extractor_b: g_bp,
        w1: g_w1,
        b1: g_b1,
        w2: g_w2,
        b2: g_score,
        temperature: g_t,
        body: g_body,
        part: g_p,
    })
}

/// Synthetic two-channel regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub corruption_rate: f64,
    pub dim: usize,
    pub batch: usize,
    pub body_noise: f64,
    pub part_noise: f64,
    /// Part-channel noise levels drawn uniformly for corrupted samples.
    pub corrupt_noise: Vec<f64>,
    pub update_weight: f64,
    pub eval_samples: usize,
    pub confidence_threshold: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            steps: 2000,
            lr: 1e-3,
            corruption_rate: 0.5,
            dim: DEFAULT_DIM,
            batch: 32,
            body_noise: 0.3,
            part_noise: 0.1,
            corrupt_noise: vec![0.75, 1.5, 3.0],
            update_weight: 0.01,
            eval_samples: 2000,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return bad("corruption_rate must lie in [0, 1]");
        }
        if self.dim == 0 || self.batch == 0 || self.eval_samples == 0 {
            return bad("dim, batch and eval_samples must be positive");
        }
        if !(self.body_noise >= 0.0 && self.part_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self.corruption_rate > 0.0 && self.corrupt_noise.is_empty() {
            return bad("corrupt_noise must be non-empty when corruption_rate > 0");
        }
        if self.corrupt_noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("corrupt_noise entries must be non-negative");
        }
        if !(self.update_weight >= 0.0 && self.update_weight.is_finite()) {
            return bad("update_weight must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub noise_level: f64,
    pub mean_w: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub mean_w_clean: Option<f64>,
    pub mean_w_corrupted: Option<f64>,
    /// Probability that a corrupted sample gets a larger `w` than a clean one.
    pub auc: Option<f64>,
    /// Fraction of evaluation samples whose part expert is trusted.
    pub trusted_clean: Option<f64>,
    pub trusted_corrupted: Option<f64>,
    pub calibration: Vec<CalibrationRow>,
}

struct Sample {
    body: Vec<f64>,
    part: Vec<f64>,
    target: Vec<f64>,
    noise: f64,
    corrupted: bool,
}

struct Task {
    mixing: DMatrix<f64>,
}

impl Task {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        Task {
            mixing: g.qr().q(),
        }
    }

    fn sample(&self, cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Sample {
        let d = cfg.dim;
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let target = normal(d);
        let body_noise = normal(d);
        let part_noise = normal(d);
        let corrupted = cfg.corruption_rate > 0.0 && rng.random_bool(cfg.corruption_rate);
        let noise = if corrupted {
            cfg.corrupt_noise[rng.random_range(0..cfg.corrupt_noise.len())]
        } else {
            cfg.part_noise
        };
        let body = (0..d)
            .map(|i| {
                let mixed: f64 = (0..d).map(|j| self.mixing[(i, j)] * target[j]).sum();
                mixed + cfg.body_noise * body_noise[i]
            })
            .collect();
        let part = target.iter().zip(&part_noise).map(|(z, n)| z + noise * n).collect();
        Sample {
            body,
            part,
            target,
            noise,
            corrupted,
        }
    }
}

/// Per-sample objective `‖fused − z‖²/d + λ‖F_b^p − fused‖₁/d` and its upstream.
fn sample_loss(out: &ForwardOutput, target: &[f64], update_weight: f64) -> Result<(f64, Upstream)> {
    let d = target.len() as f64;
    let fused = &out.fusion.fused;
    let mut up = Upstream::zeros(target.len());
    let mut mse = 0.0;
    for i in 0..target.len() {
        let e = fused[i] - target[i];
        mse += e * e;
        let diff = out.body_part[i] - fused[i];
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        up.fused[i] = 2.0 * e / d - update_weight * s / d;
        up.body_part[i] = update_weight * s / d;
    }
    let upd = update_loss(&out.body_part, fused)?;
    Ok((mse / d + update_weight * upd / d, up))
}

/// Trains a fresh [`ModeratorState`] with Adam and evaluates it on held-out
/// samples.
pub fn train_toy(cfg: &ToyConfig) -> Result<(ModeratorState, ToyReport)> {
    cfg.validate()?;
    let mut state = ModeratorState::init(cfg.dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let task = Task::new(cfg.dim, &mut rng);

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), state.num_params());
    let mut final_loss = None;
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; state.num_params()];
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let s = task.sample(cfg, &mut rng);
            let (out, cache) = forward(&state, &s.body, &s.part)?;
            let (l, up) = sample_loss(&out, &s.target, cfg.update_weight)?;
            loss += l;
            let g = backward(&state, &cache, &up)?;
            for (a, b) in grad.iter_mut().zip(g.params_flat()) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.batch as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        final_loss = Some(loss);
        let step = adam.step(&grad, None);
        let mut params = state.params_flat();
        for (p, s) in params.iter_mut().zip(step) {
            *p += s;
        }
        state.set_params_flat(&params)?;
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(2);
    let mut clean = Vec::new();
    let mut corrupted = Vec::new();
    let mut by_level: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for _ in 0..cfg.eval_samples {
        let s = task.sample(cfg, &mut eval_rng);
        let (out, _) = forward(&state, &s.body, &s.part)?;
        let w = out.fusion.w;
        if s.corrupted {
            corrupted.push(w);
        } else {
            clean.push(w);
        }
        let e = by_level.entry(s.noise.to_bits()).or_insert((s.noise, 0.0, 0));
        e.1 += w;
        e.2 += 1;
    }
    let mut calibration: Vec<CalibrationRow> = by_level
        .into_values()
        .map(|(noise_level, sum, count)| CalibrationRow {
            noise_level,
            mean_w: sum / count as f64,
            count,
        })
        .collect();
    calibration.sort_by(|a, b| a.noise_level.total_cmp(&b.noise_level));

    let thr = cfg.confidence_threshold;
    let report = ToyReport {
        steps: cfg.steps,
        final_loss,
        mean_w_clean: mean(&clean),
        mean_w_corrupted: mean(&corrupted),
        auc: auc(&corrupted, &clean),
        trusted_clean: fraction(&clean, |w| w < thr),
        trusted_corrupted: fraction(&corrupted, |w| w < thr),
        calibration,
    };
    Ok((state, report))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn fraction(xs: &[f64], pred: impl Fn(f64) -> bool) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().filter(|&&x| pred(x)).count() as f64 / xs.len() as f64)
}

/// Mann–Whitney estimate of `P(pos > neg)`, ties counted half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&x| (x, true))
        .chain(neg.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

pub fn write_calibration_csv<W: Write>(rows: &[CalibrationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
