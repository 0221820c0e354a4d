//! Weak-perspective projection: drop depth, scale, translate.
//!
//! Image coordinates: x right, y down, origin at the crop's top-left corner,
//! crops normalized to [`CROP_SIZE`] pixels.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::body_model::Vec3;
use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Side length of a normalized crop, in pixels.
pub const CROP_SIZE: f64 = 224.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCamera {
    pub s: f64,
    pub t: [f64; 2],
}

impl WeakPerspectiveCamera {
    pub fn new(s: f64, t: [f64; 2]) -> Result<Self> {
        let cam = WeakPerspectiveCamera { s, t };
        cam.validate()?;
        Ok(cam)
    }

    pub fn identity() -> Self {
        WeakPerspectiveCamera { s: 1.0, t: [0.0; 2] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t[0].is_finite() && self.t[1].is_finite() && self.s.is_finite()) {
            return Err(Error::ConfigInvalid("non-finite camera".into()));
        }
        if self.s <= 0.0 {
            return Err(Error::NonPositiveScale(self.s));
        }
        Ok(())
    }

    fn apply(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.s * p.x + self.t[0], self.s * p.y + self.t[1])
    }
}

/// `s · (x, y) + t` for every point.
pub fn project(points: &[Vec3], cam: &WeakPerspectiveCamera) -> Result<Vec<Vec2>> {
    cam.validate()?;
    Ok(points.iter().map(|p| cam.apply(p)).collect())
}

/// Gradients of a scalar through [`project`], given `∂L/∂uv` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectGrad {
    pub points: Vec<Vec3>,
    pub s: f64,
    pub t: [f64; 2],
}

pub fn project_vjp(points: &[Vec3], cam: &WeakPerspectiveCamera, upstream: &[Vec2]) -> ProjectGrad {
    let mut g = ProjectGrad {
        points: Vec::with_capacity(points.len()),
        s: 0.0,
        t: [0.0; 2],
    };
    for (p, u) in points.iter().zip(upstream) {
        g.points.push(Vec3::new(cam.s * u.x, cam.s * u.y, 0.0));
        g.s += p.x * u.x + p.y * u.y;
        g.t[0] += u.x;
        g.t[1] += u.y;
    }
    g
}
