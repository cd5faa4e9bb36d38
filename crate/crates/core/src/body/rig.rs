use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Affine, Mat3, Vec3};
use crate::rng;

/// Number of body parts (and joints) in the humanoid rig.
pub const NUM_PARTS: usize = 16;

/// Default number of shape coefficients.
pub const NUM_SHAPE: usize = 8;

pub const PART_NAMES: [&str; NUM_PARTS] = [
    "pelvis",
    "spine",
    "chest",
    "head",
    "l_upper_arm",
    "r_upper_arm",
    "l_forearm",
    "r_forearm",
    "l_hand",
    "r_hand",
    "l_thigh",
    "r_thigh",
    "l_shin",
    "r_shin",
    "l_foot",
    "r_foot",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::invalid(format!(
                "box min {min:?} must be below max {max:?} on every axis"
            )));
        }
        Ok(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }
}

/// Segment `a`–`b` swept by a sphere of `radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn sdf(&self, p: Vec3) -> f64 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        (p - (self.a + ab * t)).norm() - self.radius
    }

    /// Distance and its spatial gradient; the gradient is zero on the axis.
    pub fn sdf_grad(&self, p: Vec3) -> (f64, Vec3) {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        let r = p - (self.a + ab * t);
        let n = r.norm();
        let g = if n > 1e-15 { r * (1.0 / n) } else { Vec3::ZERO };
        (n - self.radius, g)
    }

    pub fn transformed(&self, m: &Affine) -> Capsule {
        Capsule {
            a: m.apply(self.a),
            b: m.apply(self.b),
            radius: self.radius,
        }
    }

    /// First positive hit distance along a unit-direction ray.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let sphere = |c: Vec3| {
            let oc = origin - c;
            let b = dir.dot(oc);
            let h = b * b - (oc.dot(oc) - self.radius * self.radius);
            (h >= 0.0).then(|| -b - h.sqrt()).filter(|t| *t > 0.0)
        };
        let ba = self.b - self.a;
        let oa = origin - self.a;
        let baba = ba.dot(ba);
        let bard = ba.dot(dir);
        let baoa = ba.dot(oa);
        let qa = baba - bard * bard;
        if qa > 1e-12 * baba {
            let qb = baba * dir.dot(oa) - baoa * bard;
            let qc = baba * oa.dot(oa) - baoa * baoa - self.radius * self.radius * baba;
            let h = qb * qb - qa * qc;
            if h < 0.0 {
                return None;
            }
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba && t > 0.0 {
                return Some(t);
            }
        }
        match (sphere(self.a), sphere(self.b)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    pub fn bounds(&self, margin: f64) -> Aabb {
        let r = self.radius + margin;
        Aabb {
            min: self.a.zip(self.b, f64::min).map(|v| v - r),
            max: self.a.zip(self.b, f64::max).map(|v| v + r),
        }
    }
}

/// Shape coefficients β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub beta: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros(n: usize) -> Self {
        ShapeParams { beta: vec![0.0; n] }
    }
}

/// Per-joint axis-angle rotations θ, radians, relative to the parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub theta: Vec<Vec3>,
}

impl PoseParams {
    pub fn identity(k: usize) -> Self {
        PoseParams {
            theta: vec![Vec3::ZERO; k],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Articulated template: skeleton, per-part boxes and capsules, skinned mesh
/// and blend-shape bases.
///
/// Parents precede children in index order; part `k` is carried by joint `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyRig {
    pub names: Vec<String>,
    pub joints: Vec<Vec3>,
    pub parents: Vec<Option<usize>>,
    pub boxes: Vec<Aabb>,
    pub capsules: Vec<Capsule>,
    pub vertices: Vec<Vec3>,
    /// `V × K` blend weights, row-major.
    pub weights: Vec<f64>,
    /// `S` shape bases, each one offset per vertex.
    pub shape_basis: Vec<Vec<Vec3>>,
    /// Joint whose relative rotation drives each vertex's corrective.
    pub pose_joint: Vec<usize>,
    /// Per-vertex `3 × 9` map from `vec(R − I)` to a corrective offset.
    pub pose_basis: Vec<[f64; 27]>,
}

impl BodyRig {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn vertex_weights(&self, v: usize) -> &[f64] {
        let k = self.joint_count();
        &self.weights[v * k..(v + 1) * k]
    }

    /// Checks every structural invariant of the rig.
    pub fn validate(&self) -> Result<()> {
        let k = self.joint_count();
        let v = self.vertex_count();
        if k == 0 {
            return Err(Error::invalid("rig has no joints"));
        }
        if self.parents.len() != k
            || self.boxes.len() != k
            || self.capsules.len() != k
            || self.names.len() != k
        {
            return Err(Error::invalid("per-joint arrays disagree in length"));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parents[0].is_some() {
            return Err(Error::invalid("rig needs exactly one root at index 0"));
        }
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::invalid(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        for b in &self.boxes {
            Aabb::new(b.min, b.max)?;
        }
        if self.weights.len() != v * k || self.pose_joint.len() != v || self.pose_basis.len() != v {
            return Err(Error::invalid("per-vertex arrays disagree in length"));
        }
        for i in 0..v {
            let w = self.vertex_weights(i);
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid(format!("vertex {i} has a negative weight")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("vertex {i} weights sum to {s}")));
            }
            if !self.boxes.iter().any(|b| b.contains(self.vertices[i])) {
                return Err(Error::invalid(format!("vertex {i} lies outside every box")));
            }
            if self.pose_joint[i] >= k {
                return Err(Error::invalid(format!("vertex {i} pose joint out of range")));
            }
        }
        if self.shape_basis.iter().any(|b| b.len() != v) {
            return Err(Error::invalid("shape basis length differs from vertex count"));
        }
        Ok(())
    }

    /// Rig assembled from capsule parts: boxes bound the capsules with a
    /// small margin and the mesh is sampled on the capsule surfaces.
    pub fn from_parts(spec: &[PartSpec], shape_count: usize, seed: u64) -> Result<Self> {
        let k = spec.len();
        let names = spec.iter().map(|p| p.name.to_string()).collect();
        let joints: Vec<Vec3> = spec.iter().map(|p| p.joint).collect();
        let parents: Vec<Option<usize>> = spec.iter().map(|p| p.parent).collect();
        let capsules: Vec<Capsule> = spec.iter().map(|p| p.capsule).collect();
        let boxes: Vec<Aabb> = capsules.iter().map(|c| c.bounds(BOX_MARGIN)).collect();

        let mut vertices = Vec::new();
        let mut weights = Vec::new();
        let mut owner = Vec::new();
        let mut radial = Vec::new();
        for (part, cap) in capsules.iter().enumerate() {
            for (p, s, n) in capsule_surface(cap) {
                let mut w = vec![0.0; k];
                match parents[part] {
                    Some(par) if s < BLEND_SPAN => {
                        let wp = 0.5 * (1.0 - s.max(0.0) / BLEND_SPAN);
                        w[par] = wp;
                        w[part] = 1.0 - wp;
                    }
                    _ => w[part] = 1.0,
                }
                vertices.push(p);
                weights.extend(w);
                owner.push(part);
                radial.push(n);
            }
        }

        let mut rng = rng::seeded(seed);
        let shape_basis = (0..shape_count)
            .map(|s| shape_field(s, &vertices, &radial, &owner, &mut rng))
            .collect();

        let pose_joint: Vec<usize> = owner.clone();
        let pose_basis = owner
            .iter()
            .map(|&o| {
                if parents[o].is_none() {
                    [0.0; 27]
                } else {
                    random_orthonormal_rows(&mut rng, POSE_AMPLITUDE / (2.0 * 2f64.sqrt()))
                }
            })
            .collect();

        let rig = BodyRig {
            names,
            joints,
            parents,
            boxes,
            capsules,
            vertices,
            weights,
            shape_basis,
            pose_joint,
            pose_basis,
        };
        rig.validate()?;
        Ok(rig)
    }

    /// The 16-part desk-scale humanoid in a T pose: y up, facing +z,
    /// the figure's left on +x.
    pub fn humanoid() -> Self {
        BodyRig::from_parts(&humanoid_parts(), NUM_SHAPE, HUMANOID_SEED)
            .expect("built-in humanoid is valid")
    }

    /// Pose with the arms lowered alongside the body, the base for dataset
    /// sampling and examples.
    pub fn relaxed_pose(&self) -> PoseParams {
        let mut pose = PoseParams::identity(self.joint_count());
        if self.joint_count() == NUM_PARTS {
            pose.theta[4] = Vec3::new(0.0, 0.0, -1.2);
            pose.theta[5] = Vec3::new(0.0, 0.0, 1.2);
        }
        pose
    }
}

const BOX_MARGIN: f64 = 0.01;
const BLEND_SPAN: f64 = 0.25;
const POSE_AMPLITUDE: f64 = 0.01;
const HUMANOID_SEED: u64 = 0x5eed_b0d7;

/// One capsule part of a rig under construction.
#[derive(Clone, Debug)]
pub struct PartSpec {
    pub name: &'static str,
    pub parent: Option<usize>,
    pub joint: Vec3,
    pub capsule: Capsule,
}

fn part(name: &'static str, parent: Option<usize>, joint: [f64; 3], a: [f64; 3], b: [f64; 3], r: f64) -> PartSpec {
    PartSpec {
        name,
        parent,
        joint: Vec3(joint),
        capsule: Capsule {
            a: Vec3(a),
            b: Vec3(b),
            radius: r,
        },
    }
}

pub fn humanoid_parts() -> Vec<PartSpec> {
    let n = PART_NAMES;
    vec![
        part(n[0], None, [0.0, 0.95, 0.0], [-0.07, 0.93, 0.0], [0.07, 0.93, 0.0], 0.1),
        part(n[1], Some(0), [0.0, 1.03, 0.0], [0.0, 1.08, 0.0], [0.0, 1.16, 0.0], 0.105),
        part(n[2], Some(1), [0.0, 1.22, 0.0], [0.0, 1.30, 0.0], [0.0, 1.35, 0.0], 0.125),
        part(n[3], Some(2), [0.0, 1.47, 0.0], [0.0, 1.56, 0.0], [0.0, 1.63, 0.0], 0.09),
        part(n[4], Some(2), [0.17, 1.40, 0.0], [0.19, 1.40, 0.0], [0.43, 1.40, 0.0], 0.05),
        part(n[5], Some(2), [-0.17, 1.40, 0.0], [-0.19, 1.40, 0.0], [-0.43, 1.40, 0.0], 0.05),
        part(n[6], Some(4), [0.45, 1.40, 0.0], [0.47, 1.40, 0.0], [0.68, 1.40, 0.0], 0.04),
        part(n[7], Some(5), [-0.45, 1.40, 0.0], [-0.47, 1.40, 0.0], [-0.68, 1.40, 0.0], 0.04),
        part(n[8], Some(6), [0.70, 1.40, 0.0], [0.73, 1.40, 0.0], [0.78, 1.40, 0.0], 0.035),
        part(n[9], Some(7), [-0.70, 1.40, 0.0], [-0.73, 1.40, 0.0], [-0.78, 1.40, 0.0], 0.035),
        part(n[10], Some(0), [0.09, 0.90, 0.0], [0.09, 0.85, 0.0], [0.09, 0.56, 0.0], 0.07),
        part(n[11], Some(0), [-0.09, 0.90, 0.0], [-0.09, 0.85, 0.0], [-0.09, 0.56, 0.0], 0.07),
        part(n[12], Some(10), [0.09, 0.50, 0.0], [0.09, 0.46, 0.0], [0.09, 0.13, 0.0], 0.05),
        part(n[13], Some(11), [-0.09, 0.50, 0.0], [-0.09, 0.46, 0.0], [-0.09, 0.13, 0.0], 0.05),
        part(n[14], Some(12), [0.09, 0.08, 0.0], [0.09, 0.045, -0.01], [0.09, 0.045, 0.12], 0.035),
        part(n[15], Some(13), [-0.09, 0.08, 0.0], [-0.09, 0.045, -0.01], [-0.09, 0.045, 0.12], 0.035),
    ]
}

const RINGS: usize = 5;
const AROUND: usize = 10;

/// Surface samples `(point, axial fraction, outward normal)` on a capsule.
/// The axial fraction is 0 at `a` and 1 at `b`, negative on the `a` cap.
fn capsule_surface(cap: &Capsule) -> Vec<(Vec3, f64, Vec3)> {
    let axis = (cap.b - cap.a).normalized();
    let helper = if axis[0].abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = axis.cross(helper).normalized();
    let w = axis.cross(u);
    let len = (cap.b - cap.a).norm();
    let ring_dir =
        |k: usize| -> Vec3 {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / AROUND as f64;
            u * phi.cos() + w * phi.sin()
        };
    let mut out = Vec::new();
    for i in 0..RINGS {
        let s = i as f64 / (RINGS - 1) as f64;
        let c = cap.a + axis * (s * len);
        for k in 0..AROUND {
            let n = ring_dir(k);
            out.push((c + n * cap.radius, s, n));
        }
    }
    // one latitude ring and a pole on each cap
    let lat = std::f64::consts::FRAC_PI_4;
    for (end, sign, s) in [(cap.a, -1.0, -cap.radius / len), (cap.b, 1.0, 1.0 + cap.radius / len)] {
        for k in 0..AROUND {
            let n = (ring_dir(k) * lat.cos() + axis * (sign * lat.sin())).normalized();
            out.push((end + n * cap.radius, s, n));
        }
        let n = axis * sign;
        out.push((end + n * cap.radius, s, n));
    }
    out
}

fn shape_field(
    s: usize,
    vertices: &[Vec3],
    radial: &[Vec3],
    owner: &[usize],
    rng: &mut rng::Rng,
) -> Vec<Vec3> {
    match s {
        // stature
        0 => vertices.iter().map(|v| Vec3::new(0.0, 0.04 * v.y(), 0.0)).collect(),
        // girth
        1 => radial.iter().map(|n| *n * 0.01).collect(),
        // arm span
        2 => vertices
            .iter()
            .zip(owner)
            .map(|(v, o)| {
                if (4..10).contains(o) {
                    Vec3::new(0.03 * v.x(), 0.0, 0.0)
                } else {
                    Vec3::ZERO
                }
            })
            .collect(),
        // leg length
        3 => vertices
            .iter()
            .zip(owner)
            .map(|(v, o)| {
                if *o >= 10 {
                    Vec3::new(0.0, 0.03 * (v.y() - 0.95), 0.0)
                } else {
                    Vec3::ZERO
                }
            })
            .collect(),
        // smooth random fields
        _ => {
            let freq = Vec3::new(
                rng.gen_range(1.0..4.0),
                rng.gen_range(1.0..4.0),
                rng.gen_range(1.0..4.0),
            );
            let phase: [f64; 3] = [
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
            ];
            vertices
                .iter()
                .map(|v| {
                    let t = freq.dot(*v);
                    Vec3::new(
                        0.008 * (t + phase[0]).sin(),
                        0.008 * (t + phase[1]).sin(),
                        0.008 * (t + phase[2]).sin(),
                    )
                })
                .collect()
        }
    }
}

/// Three orthonormal rows in R⁹ scaled by `scale`, flattened row-major.
fn random_orthonormal_rows(rng: &mut rng::Rng, scale: f64) -> [f64; 27] {
    let mut rows: Vec<[f64; 9]> = Vec::new();
    while rows.len() < 3 {
        let mut r = [0.0; 9];
        r.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        for q in &rows {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let n = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            r.iter_mut().for_each(|a| *a /= n);
            rows.push(r);
        }
    }
    let mut out = [0.0; 27];
    for (i, r) in rows.iter().enumerate() {
        for j in 0..9 {
            out[i * 9 + j] = r[j] * scale;
        }
    }
    out
}

/// Applies a per-vertex `3 × 9` pose basis to `vec(R − I)`.
pub(crate) fn pose_corrective(basis: &[f64; 27], rot: &Mat3) -> Vec3 {
    let f = rot.add(&Mat3::IDENTITY.scaled(-1.0)).flatten();
    let row = |i: usize| (0..9).map(|j| basis[i * 9 + j] * f[j]).sum::<f64>();
    Vec3::new(row(0), row(1), row(2))
}
