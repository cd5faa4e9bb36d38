//! Articulated body: skeleton, capsule parts with canonical bounding boxes,
//! a skinned template mesh with shape and pose blend shapes, and forward and
//! inverse linear blend skinning.

mod io;
mod rig;
mod skinning;

pub use io::{load_rig, read_rig, save_rig, write_rig, RIG_MAGIC, RIG_VERSION};
pub use rig::{
    humanoid_parts, Aabb, BodyRig, Capsule, PartSpec, PoseParams, ShapeParams, NUM_PARTS,
    NUM_SHAPE, PART_NAMES,
};
pub use skinning::{
    blend_shape_offsets, inverse_lbs, joint_transforms, lbs_forward, transform_bboxes,
    JointTransforms, OrientedBox, PosedBody, DEFAULT_NEIGHBORS, DIST_EPS,
};

/// Two-bone chain along +x (root at the origin, child joint at x = 0.3) used
/// to study skinning in isolation.
pub fn two_joint_rig() -> BodyRig {
    use crate::math::Vec3;
    let parts = [
        PartSpec {
            name: "root",
            parent: None,
            joint: Vec3::new(0.0, 0.0, 0.0),
            capsule: Capsule {
                a: Vec3::new(0.02, 0.0, 0.0),
                b: Vec3::new(0.28, 0.0, 0.0),
                radius: 0.05,
            },
        },
        PartSpec {
            name: "child",
            parent: Some(0),
            joint: Vec3::new(0.3, 0.0, 0.0),
            capsule: Capsule {
                a: Vec3::new(0.32, 0.0, 0.0),
                b: Vec3::new(0.58, 0.0, 0.0),
                radius: 0.05,
            },
        },
    ];
    BodyRig::from_parts(&parts, 0, 11).expect("two-joint rig is valid")
}
