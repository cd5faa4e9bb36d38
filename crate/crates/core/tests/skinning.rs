mod common;

use common::{round_trip_error, STUDY_BEND};
use cch::body::{
    blend_shape_offsets, joint_transforms, lbs_forward, BodyRig,
    PoseParams, ShapeParams, NUM_SHAPE,
};
use cch::math::Vec3;
use proptest::prelude::*;

#[test]
fn near_surface_round_trip_within_a_millimetre() {
    for seed in 0..3 {
        let err = round_trip_error(STUDY_BEND, 4, seed);
        assert!(err <= 1e-3, "seed {seed}: {err:.3e}");
    }
}

#[test]
fn single_neighbour_round_trip_is_exact() {
    assert!(round_trip_error(0.8, 1, 5) <= 1e-9);
}

fn humanoid() -> &'static BodyRig {
    static RIG: std::sync::OnceLock<BodyRig> = std::sync::OnceLock::new();
    RIG.get_or_init(BodyRig::humanoid)
}

fn pose_strategy() -> impl Strategy<Value = PoseParams> {
    prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5), 16)
        .prop_map(|v| PoseParams { theta: v.into_iter().map(|(a, b, c)| Vec3::new(a, b, c)).collect() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn joint_transforms_are_rigid(pose in pose_strategy()) {
        let h = joint_transforms(humanoid(), &pose).unwrap();
        for t in &h.transforms {
            prop_assert!(t.linear.orthonormality_error() <= 1e-9);
            prop_assert!((t.linear.det() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn blend_shapes_linear_in_beta(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        b1 in prop::collection::vec(-1.0f64..1.0, NUM_SHAPE),
        b2 in prop::collection::vec(-1.0f64..1.0, NUM_SHAPE),
        pose in pose_strategy(),
    ) {
        let rig = humanoid();
        let f = |beta: Vec<f64>| blend_shape_offsets(rig, &ShapeParams { beta }, &pose).unwrap();
        let zero = f(vec![0.0; NUM_SHAPE]);
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + b * y).collect();
        let lhs = f(mix);
        let (f1, f2) = (f(b1), f(b2));
        for v in 0..rig.vertex_count() {
            // pose correctives do not depend on beta, so compare the shape parts
            let s1 = f1[v] - zero[v];
            let s2 = f2[v] - zero[v];
            let rhs = s1 * a + s2 * b + zero[v];
            prop_assert!((lhs[v] - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn identity_transforms_are_identity_map(
        x in (-1.0f64..1.0, 0.0f64..2.0, -1.0f64..1.0),
        v in 0usize..1000,
    ) {
        let rig = humanoid();
        let v = v % rig.vertex_count();
        let h = cch::body::JointTransforms::identity(rig.joint_count());
        let p = Vec3::new(x.0, x.1, x.2);
        prop_assert_eq!(lbs_forward(p, rig.vertex_weights(v), &h).unwrap(), p);
    }
}
