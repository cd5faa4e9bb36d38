use super::rig::{pose_corrective, Aabb, BodyRig, PoseParams, ShapeParams};
use crate::error::{Error, Result};
use crate::math::{Affine, Mat3, Vec3};

/// Lower bound on vertex distances in the inverse-distance weights.
pub const DIST_EPS: f64 = 1e-8;

/// Default neighbour count for inverse skinning.
pub const DEFAULT_NEIGHBORS: usize = 4;

/// Rigid per-joint transforms `H_k` mapping canonical to observed space.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransforms {
    pub transforms: Vec<Affine>,
    /// Local (parent-relative) rotation of each joint.
    pub local_rotations: Vec<Mat3>,
}

impl JointTransforms {
    pub fn identity(k: usize) -> Self {
        JointTransforms {
            transforms: vec![Affine::IDENTITY; k],
            local_rotations: vec![Mat3::IDENTITY; k],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn get(&self, k: usize) -> &Affine {
        &self.transforms[k]
    }
}

/// Forward kinematics: `H_k = G_k · T(−J_k)` where `G_k` chains the parent's
/// world frame with this joint's rotation about its rest position.
pub fn joint_transforms(rig: &BodyRig, pose: &PoseParams) -> Result<JointTransforms> {
    let k = rig.joint_count();
    if pose.theta.len() != k {
        return Err(Error::invalid(format!(
            "pose has {} joints, rig has {k}",
            pose.theta.len()
        )));
    }
    if !pose.is_finite() {
        return Err(Error::invalid("pose contains non-finite rotations"));
    }
    let local: Vec<Mat3> = pose.theta.iter().map(|w| Mat3::from_axis_angle(*w)).collect();
    let mut world: Vec<Affine> = Vec::with_capacity(k);
    for j in 0..k {
        let g = match rig.parents[j] {
            None => Affine::new(local[j], rig.joints[j]),
            Some(p) => world[p].compose(&Affine::new(local[j], rig.joints[j] - rig.joints[p])),
        };
        world.push(g);
    }
    let transforms = world
        .iter()
        .zip(&rig.joints)
        .map(|(g, j)| g.compose(&Affine::translation(-*j)))
        .collect();
    Ok(JointTransforms {
        transforms,
        local_rotations: local,
    })
}

/// `x ↦ Σ_k h_k H_k x`.
pub fn lbs_forward(x: Vec3, weights: &[f64], h: &JointTransforms) -> Result<Vec3> {
    if weights.len() != h.len() {
        return Err(Error::invalid("one blend weight per joint required"));
    }
    if !x.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("non-finite skinning input"));
    }
    Ok(weights
        .iter()
        .zip(&h.transforms)
        .filter(|(w, _)| **w != 0.0)
        .fold(Vec3::ZERO, |acc, (w, t)| acc + t.apply(x) * *w))
}

/// Per-vertex `B^S(β) + B^P(θ)`.
pub fn blend_shape_offsets(rig: &BodyRig, shape: &ShapeParams, pose: &PoseParams) -> Result<Vec<Vec3>> {
    if shape.beta.len() != rig.shape_count() {
        return Err(Error::invalid(format!(
            "shape has {} coefficients, rig has {}",
            shape.beta.len(),
            rig.shape_count()
        )));
    }
    if pose.theta.len() != rig.joint_count() {
        return Err(Error::invalid("pose length differs from joint count"));
    }
    if shape.beta.iter().any(|b| !b.is_finite()) || !pose.is_finite() {
        return Err(Error::invalid("non-finite blend-shape input"));
    }
    let rots: Vec<Mat3> = pose.theta.iter().map(|w| Mat3::from_axis_angle(*w)).collect();
    let offsets = (0..rig.vertex_count())
        .map(|v| {
            let mut off = Vec3::ZERO;
            for (b, basis) in shape.beta.iter().zip(&rig.shape_basis) {
                if *b != 0.0 {
                    off += basis[v] * *b;
                }
            }
            off + pose_corrective(&rig.pose_basis[v], &rots[rig.pose_joint[v]])
        })
        .collect();
    Ok(offsets)
}

/// Canonical box carried rigidly into observation space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    /// Box in its own (canonical) coordinates.
    pub local: Aabb,
    /// Local → observed rigid transform.
    pub to_world: Affine,
    /// Observed → local.
    pub to_local: Affine,
}

impl OrientedBox {
    pub fn new(local: Aabb, to_world: Affine) -> Self {
        OrientedBox {
            local,
            to_world,
            to_local: to_world.rigid_inverse(),
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.local.min, self.local.max);
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let p = Vec3::new(
                if i & 1 == 0 { a[0] } else { b[0] },
                if i & 2 == 0 { a[1] } else { b[1] },
                if i & 4 == 0 { a[2] } else { b[2] },
            );
            *c = self.to_world.apply(p);
        }
        out
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.local.contains(self.to_local.apply(p))
    }
}

/// Box `b` moves with joint `b`.
pub fn transform_bboxes(rig: &BodyRig, h: &JointTransforms) -> Vec<OrientedBox> {
    rig.boxes
        .iter()
        .zip(&h.transforms)
        .map(|(b, t)| OrientedBox::new(*b, *t))
        .collect()
}

/// Observed mesh for one pose and shape, with the per-vertex transforms
/// `M_v = (Σ_j h_vj H_j) · T(offset_v)` and their inverses precomputed.
#[derive(Clone, Debug)]
pub struct PosedBody {
    pub transforms: JointTransforms,
    pub observed: Vec<Vec3>,
    pub vertex_transforms: Vec<Affine>,
    pub vertex_inverses: Vec<Affine>,
    pub boxes: Vec<OrientedBox>,
}

impl PosedBody {
    pub fn new(rig: &BodyRig, shape: &ShapeParams, pose: &PoseParams) -> Result<Self> {
        let transforms = joint_transforms(rig, pose)?;
        let offsets = blend_shape_offsets(rig, shape, pose)?;
        PosedBody::with_offsets(rig, transforms, &offsets)
    }

    pub fn with_offsets(rig: &BodyRig, transforms: JointTransforms, offsets: &[Vec3]) -> Result<Self> {
        if offsets.len() != rig.vertex_count() {
            return Err(Error::invalid("one offset per vertex required"));
        }
        let mut vertex_transforms = Vec::with_capacity(offsets.len());
        let mut vertex_inverses = Vec::with_capacity(offsets.len());
        let mut observed = Vec::with_capacity(offsets.len());
        for (v, off) in offsets.iter().enumerate() {
            let skin = Affine::blend(
                rig.vertex_weights(v)
                    .iter()
                    .zip(&transforms.transforms)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(w, t)| (*w, *t)),
            );
            let m = skin.compose(&Affine::translation(*off));
            let inv = m
                .inverse()
                .ok_or_else(|| Error::Numeric(format!("vertex {v} transform is singular")))?;
            observed.push(m.apply(rig.vertices[v]));
            vertex_transforms.push(m);
            vertex_inverses.push(inv);
        }
        let boxes = transform_bboxes(rig, &transforms);
        Ok(PosedBody {
            transforms,
            observed,
            vertex_transforms,
            vertex_inverses,
            boxes,
        })
    }

    /// Indices and clamped distances of the `kn` observed vertices nearest `p`.
    pub fn nearest(&self, p: Vec3, kn: usize) -> Vec<(usize, f64)> {
        let kn = kn.min(self.observed.len());
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(kn + 1);
        for (i, v) in self.observed.iter().enumerate() {
            let d = p - *v;
            let d2 = d.dot(d);
            if best.len() < kn || d2 < best[best.len() - 1].1 {
                let pos = best.partition_point(|(_, e)| *e <= d2);
                best.insert(pos, (i, d2));
                if best.len() > kn {
                    best.pop();
                }
            }
        }
        best.into_iter()
            .map(|(i, d2)| (i, d2.sqrt().max(DIST_EPS)))
            .collect()
    }

    /// Inverse-distance-weighted inverse skinning of an observed point.
    /// Returns the canonical point and the blended inverse linear map used to
    /// carry directions.
    pub fn to_canonical(&self, p: Vec3, kn: usize) -> Result<(Vec3, Mat3)> {
        if kn == 0 {
            return Err(Error::invalid("neighbour count must be at least 1"));
        }
        if !p.is_finite() {
            return Err(Error::invalid("non-finite observed point"));
        }
        let nn = self.nearest(p, kn);
        let total: f64 = nn.iter().map(|(_, d)| 1.0 / d).sum();
        let mut x = Vec3::ZERO;
        let mut lin = Mat3::ZERO;
        for (i, d) in nn {
            let w = (1.0 / d) / total;
            let inv = &self.vertex_inverses[i];
            x += inv.apply(p) * w;
            lin = lin.add(&inv.linear.scaled(w));
        }
        Ok((x, lin))
    }

    /// Blend weights for a canonical point, interpolated from the same
    /// neighbours `to_canonical` would use for its observed image.
    pub fn neighbor_weights(&self, rig: &BodyRig, p: Vec3, kn: usize) -> Vec<f64> {
        let nn = self.nearest(p, kn);
        let total: f64 = nn.iter().map(|(_, d)| 1.0 / d).sum();
        let mut w = vec![0.0; rig.joint_count()];
        for (i, d) in nn {
            let g = (1.0 / d) / total;
            for (acc, h) in w.iter_mut().zip(rig.vertex_weights(i)) {
                *acc += g * h;
            }
        }
        w
    }
}

/// Observed point back to canonical space given transforms and offsets.
pub fn inverse_lbs(
    p: Vec3,
    rig: &BodyRig,
    h: &JointTransforms,
    offsets: &[Vec3],
    kn: usize,
) -> Result<Vec3> {
    let posed = PosedBody::with_offsets(rig, h.clone(), offsets)?;
    Ok(posed.to_canonical(p, kn)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::rig::NUM_SHAPE;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_pose_gives_identity() {
        let rig = BodyRig::humanoid();
        let h = joint_transforms(&rig, &PoseParams::identity(rig.joint_count())).unwrap();
        for t in &h.transforms {
            assert_eq!(t.linear, Mat3::IDENTITY);
            assert!(t.translation.norm() < 1e-15);
        }
    }

    #[test]
    fn two_joint_chain_rotates_child_about_root() {
        let rig = crate::body::two_joint_rig();
        let mut pose = PoseParams::identity(2);
        pose.theta[0] = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let h = joint_transforms(&rig, &pose).unwrap();
        // child rest joint (0.3,0,0) relative to root at origin → (0,0.3,0)
        let child = h.get(1).apply(rig.joints[1]);
        assert!((child - Vec3::new(0.0, 0.3, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_finite_pose_rejected() {
        let rig = BodyRig::humanoid();
        let mut pose = PoseParams::identity(rig.joint_count());
        pose.theta[3] = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(joint_transforms(&rig, &pose).is_err());
        assert!(joint_transforms(&rig, &PoseParams::identity(3)).is_err());
    }

    #[test]
    fn lbs_identity_translation_and_symmetry() {
        let x = Vec3::new(0.3, -0.2, 1.1);
        let id = JointTransforms::identity(2);
        assert_eq!(lbs_forward(x, &[0.4, 0.6], &id).unwrap(), x);

        let t = Vec3::new(0.5, 1.0, -2.0);
        let mut h = JointTransforms::identity(2);
        h.transforms[0] = Affine::translation(t);
        assert_eq!(lbs_forward(x, &[1.0, 0.0], &h).unwrap(), x + t);

        h.transforms[1] = Affine::translation(-t);
        let y = lbs_forward(x, &[0.5, 0.5], &h).unwrap();
        assert!((y - x).norm() < 1e-15);
    }

    #[test]
    fn blend_shapes_zero_and_linear() {
        let rig = BodyRig::humanoid();
        let pose = PoseParams::identity(rig.joint_count());
        let zero = blend_shape_offsets(&rig, &ShapeParams::zeros(NUM_SHAPE), &pose).unwrap();
        assert!(zero.iter().all(|o| o.norm() == 0.0));

        let mut e1 = ShapeParams::zeros(NUM_SHAPE);
        e1.beta[0] = 1.0;
        let one = blend_shape_offsets(&rig, &e1, &pose).unwrap();
        assert_eq!(one, rig.shape_basis[0]);
        e1.beta[0] = 2.0;
        let two = blend_shape_offsets(&rig, &e1, &pose).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(*a * 2.0, *b);
        }
        assert!(blend_shape_offsets(&rig, &ShapeParams::zeros(3), &pose).is_err());
    }

    #[test]
    fn boxes_follow_translation_and_rotation() {
        let rig = BodyRig::humanoid();
        let id = JointTransforms::identity(rig.joint_count());
        let boxes = transform_bboxes(&rig, &id);
        for (b, r) in boxes.iter().zip(&rig.boxes) {
            assert_eq!(b.corners()[0], r.min);
            assert_eq!(b.corners()[7], r.max);
        }

        let t = Vec3::new(0.1, -0.3, 2.0);
        let mut h = id.clone();
        h.transforms.iter_mut().for_each(|x| *x = Affine::translation(t));
        for (b, r) in transform_bboxes(&rig, &h).iter().zip(&rig.boxes) {
            assert!((b.corners()[0] - (r.min + t)).norm() < 1e-15);
            assert!((b.corners()[7] - (r.max + t)).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_box_permutes_axes() {
        let local = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 0.5)).unwrap();
        let rot = Affine::new(Mat3::from_axis_angle(Vec3::new(0.0, 0.0, FRAC_PI_2)), Vec3::ZERO);
        let b = OrientedBox::new(local, rot);
        let c = b.corners();
        let lo = c.iter().fold(Vec3::new(9.0, 9.0, 9.0), |a, p| a.zip(*p, f64::min));
        let hi = c.iter().fold(Vec3::new(-9.0, -9.0, -9.0), |a, p| a.zip(*p, f64::max));
        let ext = hi - lo;
        // x extent 2 becomes y extent, y extent 1 becomes x extent
        assert!((ext - Vec3::new(1.0, 2.0, 0.5)).norm() < 1e-12);
        assert!((ext[0] * ext[1] * ext[2] - local.volume()).abs() < 1e-12);
        assert!(b.contains(Vec3::new(-0.5, 1.0, 0.25)));
        assert!(!b.contains(Vec3::new(0.5, 1.0, 0.25)));
    }

    #[test]
    fn inverse_identity_pose_is_identity() {
        let rig = BodyRig::humanoid();
        let pose = PoseParams::identity(rig.joint_count());
        let h = joint_transforms(&rig, &pose).unwrap();
        let offsets = vec![Vec3::ZERO; rig.vertex_count()];
        let p = Vec3::new(0.05, 1.2, 0.03);
        let x = inverse_lbs(p, &rig, &h, &offsets, 4).unwrap();
        assert!((x - p).norm() <= 1e-12);
    }

    #[test]
    fn inverse_exact_at_vertices_with_one_neighbor() {
        let rig = BodyRig::humanoid();
        let mut pose = rig.relaxed_pose();
        pose.theta[10] = Vec3::new(0.4, 0.0, 0.1);
        pose.theta[0] = Vec3::new(0.0, 0.3, 0.0);
        let mut shape = ShapeParams::zeros(NUM_SHAPE);
        shape.beta[1] = 1.5;
        let posed = PosedBody::new(&rig, &shape, &pose).unwrap();
        for v in (0..rig.vertex_count()).step_by(7) {
            let (x, _) = posed.to_canonical(posed.observed[v], 1).unwrap();
            assert!((x - rig.vertices[v]).norm() <= 1e-9, "vertex {v}");
        }
    }

    #[test]
    fn zero_neighbours_rejected() {
        let rig = BodyRig::humanoid();
        let posed = PosedBody::new(&rig, &ShapeParams::zeros(NUM_SHAPE), &rig.relaxed_pose()).unwrap();
        assert!(posed.to_canonical(Vec3::ZERO, 0).is_err());
    }
}
