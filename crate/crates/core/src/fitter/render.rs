//! Differentiable image providers for the photometric and identity terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Vec2, CROP_SIZE};
use crate::error::{check_len, Error, Result};
use crate::losses::Image;

/// Renders an image from projected model vertices (face-crop pixels).
pub trait Renderer: Sync {
    fn render(&self, uv: &[Vec2]) -> Result<Image>;
    /// `∂L/∂uv` given `∂L/∂image`.
    fn render_vjp(&self, uv: &[Vec2], upstream: &Image) -> Result<Vec<Vec2>>;
}

/// Maps an image to a feature vector.
pub trait Embedder: Sync {
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
    /// `∂L/∂image` given `∂L/∂embedding`.
    fn embed_vjp(&self, image: &Image, upstream: &[f64]) -> Result<Image>;
}

/// Sum of isotropic Gaussian splats, one per selected vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatRenderer {
    pub height: usize,
    pub width: usize,
    /// Splat radius in crop pixels.
    pub sigma: f64,
    pub vertices: Vec<usize>,
    pub colors: Vec<[f64; 3]>,
}

impl SplatRenderer {
    /// Seeded colors for `vertices`.
    pub fn new(height: usize, width: usize, sigma: f64, vertices: Vec<usize>, seed: u64) -> Result<Self> {
        if height == 0 || width == 0 || !(sigma > 0.0) {
            return Err(Error::ConfigInvalid("renderer needs positive size and sigma".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colors = vertices
            .iter()
            .map(|_| std::array::from_fn(|_| rng.random_range(0.2..1.0)))
            .collect();
        Ok(SplatRenderer {
            height,
            width,
            sigma,
            vertices,
            colors,
        })
    }

    fn pixel_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            (c as f64 + 0.5) * CROP_SIZE / self.width as f64,
            (r as f64 + 0.5) * CROP_SIZE / self.height as f64,
        )
    }

    fn splats(&self, uv: &[Vec2]) -> Result<Vec<Vec2>> {
        self.vertices
            .iter()
            .map(|&v| uv.get(v).copied().ok_or(Error::IndexOutOfRange { index: v, len: uv.len() }))
            .collect()
    }
}

impl Renderer for SplatRenderer {
    fn render(&self, uv: &[Vec2]) -> Result<Image> {
        let pts = self.splats(uv)?;
        let mut img = Image::zeros(self.height, self.width, 3);
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for r in 0..self.height {
            for c in 0..self.width {
                let (x, y) = self.pixel_center(r, c);
                let o = (r * self.width + c) * 3;
                for (p, col) in pts.iter().zip(&self.colors) {
                    let g = (-((x - p.x).powi(2) + (y - p.y).powi(2)) * inv).exp();
                    for ch in 0..3 {
                        img.data[o + ch] += col[ch] * g;
                    }
                }
            }
        }
        Ok(img)
    }

    fn render_vjp(&self, uv: &[Vec2], upstream: &Image) -> Result<Vec<Vec2>> {
        if upstream.height != self.height || upstream.width != self.width || upstream.channels != 3 {
            return Err(Error::ShapeMismatch("render upstream has the wrong shape".into()));
        }
        let pts = self.splats(uv)?;
        let s2 = self.sigma * self.sigma;
        let inv = 1.0 / (2.0 * s2);
        let mut grad = vec![Vec2::zeros(); uv.len()];
        for (k, (p, col)) in pts.iter().zip(&self.colors).enumerate() {
            let mut g = Vec2::zeros();
            for r in 0..self.height {
                for c in 0..self.width {
                    let (x, y) = self.pixel_center(r, c);
                    let o = (r * self.width + c) * 3;
                    let up: f64 = (0..3).map(|ch| upstream.data[o + ch] * col[ch]).sum();
                    if up == 0.0 {
                        continue;
                    }
                    let w = (-((x - p.x).powi(2) + (y - p.y).powi(2)) * inv).exp();
                    g += Vec2::new(x - p.x, y - p.y) * (up * w / s2);
                }
            }
            grad[self.vertices[k]] += g;
        }
        Ok(grad)
    }
}

/// `e = M · vec(image) + b` with a seeded random `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedder {
    pub dim: usize,
    pub input_len: usize,
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearEmbedder {
    pub fn new(dim: usize, height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let input_len = height * width * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (input_len.max(1) as f64).sqrt();
        LinearEmbedder {
            dim,
            input_len,
            matrix: (0..dim * input_len).map(|_| rng.random_range(-a..a)).collect(),
            bias: (0..dim).map(|_| rng.random_range(0.5..1.0)).collect(),
        }
    }
}

impl Embedder for LinearEmbedder {
    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        check_len("embedder input", self.input_len, image.data.len())?;
        Ok((0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.input_len..(i + 1) * self.input_len];
                self.bias[i] + row.iter().zip(&image.data).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }

    fn embed_vjp(&self, image: &Image, upstream: &[f64]) -> Result<Image> {
        check_len("embedder input", self.input_len, image.data.len())?;
        check_len("embedding gradient", self.dim, upstream.len())?;
        let mut g = Image::zeros(image.height, image.width, image.channels);
        for (i, &u) in upstream.iter().enumerate() {
            let row = &self.matrix[i * self.input_len..(i + 1) * self.input_len];
            for (gd, m) in g.data.iter_mut().zip(row) {
                *gd += u * m;
            }
        }
        Ok(g)
    }
}
