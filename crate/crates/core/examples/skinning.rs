//! Poses the humanoid, then maps surface-adjacent points back to the
//! canonical frame and forward again.

use cch::body::{joint_transforms, lbs_forward, BodyRig, PosedBody};
use cch::math::Vec3;
use cch::rng;
use cch::train::dataset::sample_pose;
use rand::Rng;

fn main() -> cch::Result<()> {
    let rig = BodyRig::humanoid();
    let pose = sample_pose(&rig, &mut rng::seeded(1));
    // Pure skinning without blend-shape offsets.
    let zeros = vec![Vec3::ZERO; rig.vertex_count()];
    let posed = PosedBody::with_offsets(&rig, joint_transforms(&rig, &pose)?, &zeros)?;
    println!("{} joints, {} vertices", rig.joint_count(), rig.vertex_count());

    let mut r = rng::seeded(2);
    for kn in [1, 4, 8] {
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let v = r.gen_range(0..rig.vertex_count());
            let offset = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)) * 0.005;
            let p = posed.observed[v] + offset;
            let (x, _) = posed.to_canonical(p, kn)?;
            let w = posed.neighbor_weights(&rig, p, kn);
            let back = lbs_forward(x, &w, &posed.transforms)?;
            worst = worst.max((back - p).norm());
        }
        println!("Kn = {kn}: worst forward(inverse(p)) error {worst:.2e} m");
    }
    Ok(())
}
