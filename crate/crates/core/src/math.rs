//! Small fixed-size linear algebra for rigs and rays.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(self) -> f64 {
        self.0[0]
    }
    pub fn y(self) -> f64 {
        self.0[1]
    }
    pub fn z(self) -> f64 {
        self.0[2]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3(self.0.map(f))
    }

    pub fn zip(self, o: Vec3, f: impl Fn(f64, f64) -> f64) -> Vec3 {
        Vec3([f(self.0[0], o.0[0]), f(self.0[1], o.0[1]), f(self.0[2], o.0[2])])
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        self.zip(o, |a, b| a + b)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        self.zip(o, |a, b| a - b)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.map(|a| -a)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.map(|a| a * s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn from_cols(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
        Mat3([[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn scaled(&self, s: f64) -> Mat3 {
        Mat3(self.0.map(|r| r.map(|v| v * s)))
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += o.0[i][j];
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d.abs() < 1e-300 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        let c = |a: usize, b: usize, x: usize, y: usize| m[a][b] * m[x][y] - m[a][y] * m[x][b];
        let adj = [
            [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
            [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
            [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
        ];
        Some(Mat3(adj).scaled(1.0 / d))
    }

    /// Rotation from an axis-angle vector (Rodrigues).
    pub fn from_axis_angle(w: Vec3) -> Mat3 {
        let angle = w.norm();
        if angle < 1e-12 {
            // first-order term keeps tiny rotations consistent
            let k = Mat3([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]);
            return Mat3::IDENTITY.add(&k);
        }
        let a = w * (1.0 / angle);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = a.0;
        Mat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// Max deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul_mat(self);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((p.0[i][j] - target).abs());
            }
        }
        e
    }

    pub fn flatten(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

/// Affine map `x ↦ linear·x + translation`; rigid when `linear` is a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub linear: Mat3,
    pub translation: Vec3,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        linear: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(linear: Mat3, translation: Vec3) -> Self {
        Affine {
            linear,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Affine::new(Mat3::IDENTITY, t)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.linear.mul_vec(p) + self.translation
    }

    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        self.linear.mul_vec(d)
    }

    pub fn compose(&self, inner: &Affine) -> Affine {
        Affine {
            linear: self.linear.mul_mat(&inner.linear),
            translation: self.linear.mul_vec(inner.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Option<Affine> {
        let inv = self.linear.inverse()?;
        Some(Affine {
            linear: inv,
            translation: -inv.mul_vec(self.translation),
        })
    }

    /// Inverse of a rigid transform via the transpose.
    pub fn rigid_inverse(&self) -> Affine {
        let rt = self.linear.transpose();
        Affine {
            linear: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// Weighted sum of affine maps (not itself rigid in general).
    pub fn blend(items: impl IntoIterator<Item = (f64, Affine)>) -> Affine {
        let mut linear = Mat3::ZERO;
        let mut translation = Vec3::ZERO;
        for (w, a) in items {
            linear = linear.add(&a.linear.scaled(w));
            translation += a.translation * w;
        }
        Affine {
            linear,
            translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = Mat3::from_axis_angle(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let v = r.mul_vec(Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((r.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn affine_inverse_round_trip() {
        let a = Affine::new(
            Mat3::from_axis_angle(Vec3::new(0.3, -0.2, 0.9)),
            Vec3::new(1.0, 2.0, -0.5),
        );
        let p = Vec3::new(0.1, 0.7, -1.3);
        let q = a.inverse().unwrap().apply(a.apply(p));
        assert!((q - p).norm() < 1e-14);
        let q = a.rigid_inverse().apply(a.apply(p));
        assert!((q - p).norm() < 1e-14);
    }
}
