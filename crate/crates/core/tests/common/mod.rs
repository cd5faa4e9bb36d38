#![allow(dead_code)]

use cch::body::{inverse_lbs, joint_transforms, lbs_forward, two_joint_rig, BodyRig, PoseParams, PosedBody, ShapeParams};
use cch::config::TrainConfig;
use cch::fields::{FieldConfig, Generator, RadianceSample};
use cch::math::Vec3;
use cch::rays::{stratified_samples, Camera, CameraConfig};
use cch::render::{integrate_ray, render_image, RenderConfig, Scene};
use cch::text::{encode, Vocabulary};
use cch::train::dataset::capsule_segmentation;
use rand::Rng;

/// Bend used for the two-joint round-trip bound.
pub const STUDY_BEND: f64 = 0.5;

/// Max forward(inverse(p)) error over near-surface points of a bent
/// two-joint chain.
pub fn round_trip_error(bend: f64, kn: usize, seed: u64) -> f64 {
    let rig = two_joint_rig();
    let mut pose = PoseParams::identity(2);
    pose.theta[1] = Vec3::new(0.0, 0.0, bend);
    let h = joint_transforms(&rig, &pose).unwrap();
    let zeros = vec![Vec3::ZERO; rig.vertex_count()];
    let posed = PosedBody::with_offsets(&rig, h.clone(), &zeros).unwrap();
    let mut rng = cch::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let v = rng.gen_range(0..rig.vertex_count());
        let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
        let p = posed.observed[v] + dir * rng.gen_range(0.0..0.01);
        let x = inverse_lbs(p, &rig, &h, &zeros, kn).unwrap();
        let w = posed.neighbor_weights(&rig, p, kn);
        let back = lbs_forward(x, &w, &h).unwrap();
        worst = worst.max((back - p).norm());
    }
    worst
}

/// Closed-form color of a ray through constant media.
pub fn constant_media(sigma: f64, color: [f64; 3], length: f64, bg: [f64; 3]) -> [f64; 3] {
    let t = (-sigma * length).exp();
    [0, 1, 2].map(|c| color[c] * (1.0 - t) + bg[c] * t)
}

/// Mean relative error of stratified quadrature over 256 seeded rays of
/// constant media.
pub fn quadrature_error(n: usize) -> f64 {
    let (near, far, sigma) = (1.0, 3.0, 0.8);
    let color = [0.9, 0.4, 0.1];
    let bg = [1.0, 1.0, 1.0];
    let exact = constant_media(sigma, color, far - near, bg);
    let mut total = 0.0;
    for seed in 0..256 {
        let mut rng = cch::rng::stream(seed, 0);
        let ts = stratified_samples(near, far, n, &mut rng).unwrap();
        let s = RadianceSample {
            color,
            sigma,
            delta_d: 0.0,
        };
        let samples: Vec<(f64, RadianceSample)> = ts.iter().map(|t| (*t, s)).collect();
        let out = integrate_ray(&samples, (far - near) / n as f64, bg).unwrap();
        let err: f64 = (0..3).map(|c| ((out.rgb[c] - exact[c]) / exact[c]).abs()).fold(0.0, f64::max);
        total += err;
    }
    total / 256.0
}

/// Silhouette IoU of the untrained generator at the identity pose against
/// the capsule rasterization, at 128×64.
pub fn template_iou() -> f64 {
    let rig = BodyRig::humanoid();
    let vocab = Vocabulary::fashion();
    let gen = Generator::new(FieldConfig::default(), &rig, vocab.len(), &mut cch::rng::seeded(0)).unwrap();
    let camera = Camera::from_config(&CameraConfig::default()).unwrap();
    let pose = PoseParams::identity(rig.joint_count());
    let scene = Scene::new(&rig, &ShapeParams::zeros(rig.shape_count()), &pose, RenderConfig::default()).unwrap();
    let text = encode("long-sleeve denim pure color blue upper", &vocab, gen.embeddings(), 32).unwrap();
    let out = render_image(&gen, &scene, &camera, &text, 0).unwrap();
    let seg = capsule_segmentation(&rig, &pose, &camera).unwrap();
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, label) in seg.labels.iter().enumerate() {
        let a = out.opacity[p] >= 0.5;
        let b = *label > 0;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    inter as f64 / union as f64
}

pub fn overfit_config() -> TrainConfig {
    TrainConfig::parse(include_str!("../../configs/overfit.toml")).unwrap()
}

/// A config small enough for multi-step tests in seconds.
pub fn tiny_config() -> TrainConfig {
    let mut c = overfit_config();
    c.train_size = [32, 16];
    c.patch = Some([16, 16]);
    c.render.samples = 12;
    c.eik_points = 8;
    c.dataset.count = 3;
    c.batch = 2;
    c.validate().unwrap();
    c
}
