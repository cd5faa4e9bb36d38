//! Pinhole cameras, ray–box slab intersection and stratified depth samples.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::body::OrientedBox;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::rng::Rng;

/// Default samples per ray.
pub const DEFAULT_SAMPLES: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray {
            origin,
            dir: dir.normalized(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Pinhole camera. The basis columns are right, up, and forward (the
/// viewing direction); image rows grow downward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub basis: Mat3,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Focal length in pixels at `width × height`.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraConfig {
    /// Frontal view of the standing humanoid at 64 × 128 (width × height).
    fn default() -> Self {
        CameraConfig {
            position: [0.0, 0.86, 3.4],
            look_at: [0.0, 0.86, 0.0],
            up: [0.0, 1.0, 0.0],
            focal: 220.0,
            width: 64,
            height: 128,
        }
    }
}

impl Camera {
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal > 0.0) || !focal.is_finite() {
            return Err(Error::invalid("focal length must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("camera target coincides with position"));
        }
        let forward = forward.normalized();
        let right = forward.cross(up);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("camera up vector is parallel to the view"));
        }
        let right = right.normalized();
        let true_up = right.cross(forward);
        Ok(Camera {
            position,
            basis: Mat3::from_cols(right, true_up, forward),
            focal,
            width,
            height,
        })
    }

    pub fn from_config(c: &CameraConfig) -> Result<Self> {
        Camera::look_at(Vec3(c.position), Vec3(c.look_at), Vec3(c.up), c.focal, c.width, c.height)
    }

    pub fn right(&self) -> Vec3 {
        self.basis.col(0)
    }
    pub fn up(&self) -> Vec3 {
        self.basis.col(1)
    }
    pub fn forward(&self) -> Vec3 {
        self.basis.col(2)
    }

    /// Same view at a different resolution; focal scales with the width.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        Camera {
            focal: self.focal * width as f64 / self.width as f64,
            width,
            height,
            ..*self
        }
    }

    /// Ray through the centre of pixel (`row`, `col`).
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let x = (col as f64 + 0.5 - self.width as f64 / 2.0) / self.focal;
        let y = (self.height as f64 / 2.0 - (row as f64 + 0.5)) / self.focal;
        let d = self.forward() + self.right() * x + self.up() * y;
        Ray::new(self.position, d)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// One ray per pixel in row-major order.
pub fn generate_rays(camera: &Camera) -> Vec<Ray> {
    (0..camera.height)
        .flat_map(|r| (0..camera.width).map(move |c| camera.ray(r, c)))
        .collect()
}

/// Slab test in the box's local frame; `None` when the ray misses or the
/// box lies behind the origin. The entry is clamped to 0 for origins
/// inside the box.
pub fn ray_box_intersect(ray: &Ray, b: &OrientedBox) -> Option<(f64, f64)> {
    let o = b.to_local.apply(ray.origin);
    let d = b.to_local.apply_dir(ray.dir);
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i] < b.local.min[i] || o[i] > b.local.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut t0 = (b.local.min[i] - o[i]) * inv;
        let mut t1 = (b.local.max[i] - o[i]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        near = near.max(t0);
        far = far.min(t1);
    }
    let near = near.max(0.0);
    (near < far).then_some((near, far))
}

/// Union interval over every box the ray crosses: earliest entry to latest exit.
pub fn ray_boxes_interval(ray: &Ray, boxes: &[OrientedBox]) -> Option<(f64, f64)> {
    boxes
        .iter()
        .filter_map(|b| ray_box_intersect(ray, b))
        .reduce(|(a0, a1), (b0, b1)| (a0.min(b0), a1.max(b1)))
}

/// One uniform sample inside each of `n` equal strata of `[near, far)`.
pub fn stratified_samples(near: f64, far: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(near < far) {
        return Err(Error::InvalidInterval { near, far });
    }
    if n == 0 {
        return Err(Error::invalid("at least one sample per ray"));
    }
    let width = (far - near) / n as f64;
    Ok((0..n)
        .map(|i| near + (i as f64 + rng.gen::<f64>()) * width)
        .collect())
}
