//! Renders the untrained generator at the rest pose and compares its
//! silhouette with the analytic capsule rasterization.

use std::time::Instant;

use cch::body::{BodyRig, PoseParams, ShapeParams};
use cch::fields::{FieldConfig, Generator};
use cch::rays::{Camera, CameraConfig};
use cch::render::{render_image, RenderConfig, Scene};
use cch::rng;
use cch::text::{encode, Vocabulary};
use cch::train::dataset::capsule_segmentation;

fn main() -> cch::Result<()> {
    let rig = BodyRig::humanoid();
    let vocab = Vocabulary::fashion();
    let gen = Generator::new(FieldConfig::default(), &rig, vocab.len(), &mut rng::seeded(0))?;
    let camera = Camera::from_config(&CameraConfig::default())?;
    let pose = PoseParams::identity(rig.joint_count());
    let scene = Scene::new(&rig, &ShapeParams::zeros(rig.shape_count()), &pose, RenderConfig::default())?;
    let text = encode("long-sleeve denim pure color blue upper", &vocab, gen.embeddings(), 32)?;

    let start = Instant::now();
    let out = render_image(&gen, &scene, &camera, &text, 0)?;
    let elapsed = start.elapsed();

    let seg = capsule_segmentation(&rig, &pose, &camera)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, label) in seg.labels.iter().enumerate() {
        let a = out.opacity[p] >= 0.5;
        let b = *label > 0;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    println!(
        "{}x{} frame in {:.2?}; silhouette IoU {:.4}",
        camera.height,
        camera.width,
        elapsed,
        inter as f64 / union as f64
    );
    if std::env::var("CCH_DEBUG").is_ok() {
        for r in 0..camera.height {
            let line: String = (0..camera.width)
                .map(|c| {
                    let p = r * camera.width + c;
                    match (out.opacity[p] >= 0.5, seg.labels[p] > 0) {
                        (true, true) => '#',
                        (false, true) => 'o',
                        (true, false) => '+',
                        _ => '.',
                    }
                })
                .collect();
            println!("{line}");
        }
    }
    let path = std::env::temp_dir().join("cch_template.ppm");
    out.image.save_ppm(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
