//! Finite-difference checks of the two training objectives.

use crate::autodiff::{gradcheck, GradcheckConfig, GradcheckReport, Graph, Tensor};
use crate::config::TrainConfig;
use crate::disc::{Discriminator, SEG_CLASSES};
use crate::error::Result;
use crate::fields::Generator;
use crate::render::{sample_batch, Scene};
use crate::rng;
use crate::train::dataset::generate_record;
use crate::train::trainer::{adversarial, disc_objective, eikonal_subset, fake_patch, generator_objective, patch_pixels, train_camera};
use crate::train::{rig_for, vocab_for};

/// Patch side used by [`model_gradcheck`].
pub const CHECK_PATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct ModelGradcheck {
    /// Generator parameters through rendering, Δd terms and the adversarial loss.
    pub generator: GradcheckReport,
    /// Discriminator parameters through `loss_d` including R1.
    pub discriminator: GradcheckReport,
}

impl ModelGradcheck {
    pub fn passed(&self) -> bool {
        self.generator.passed() && self.discriminator.passed()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.generator.max_rel_error().max(self.discriminator.max_rel_error())
    }
}

/// Checks both objectives for freshly initialized networks on a
/// `CHECK_PATCH`² patch of one toy record. The Δd heads are perturbed away from
/// zero first so the offset and eikonal terms carry gradient.
pub fn model_gradcheck(config: &TrainConfig, cfg: &GradcheckConfig) -> Result<ModelGradcheck> {
    let rig = rig_for(config)?;
    let vocab = vocab_for(config)?;
    let camera = train_camera(config)?;
    let record = generate_record(&rig, &config.dataset.grammar, &camera, config.render.background, config.seed, 0)?;
    let ids = vocab.tokenize(&record.description, config.max_len)?;
    let scene = Scene::new(&rig, &record.shape, &record.pose, config.render.clone())?;

    let mut gen = Generator::new(config.field.clone(), &rig, vocab.len(), &mut rng::stream(config.seed, 1))?;
    let disc = Discriminator::new(config.disc.clone(), vocab.len(), &mut rng::stream(config.seed, 2))?;
    let mut r = rng::stream(config.seed, 4);
    for b in 0..gen.part_count() {
        let (w, bias) = gen.delta_head(b);
        for i in [w, bias] {
            use rand::Rng as _;
            let t = gen.params.get_mut(i);
            t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.05..0.05));
        }
    }

    let p = CHECK_PATCH;
    let (row, col) = ((camera.height - p) / 2, (camera.width - p) / 2);
    let pixels = patch_pixels(camera.width, row, col, p, p);
    let batch = sample_batch(&scene, &camera, &pixels, config.seed, (gen.config.mix_m, gen.config.mix_n))?;
    let subset = eikonal_subset(&batch, config.eik_points, &mut r);
    let real = record.image.crop(row, col, p, p)?.to_chw();
    let seg = record.segmentation.crop(row, col, p, p)?.one_hot(SEG_CLASSES);

    let blocks: Vec<(String, Tensor)> = (0..gen.params.len())
        .map(|i| (gen.params.name(i).to_string(), gen.params.get(i).clone()))
        .collect();
    let generator = gradcheck(
        &blocks,
        |g, vars| {
            let fake = fake_patch(&gen, g, vars, &batch, &ids, (p, p), &subset)?;
            let dc = disc.bind(g, false);
            let adv = adversarial(&disc, g, &dc, fake.image, &seg, &ids)?;
            let obj = generator_objective(g, &[adv], &Vec::from_iter(fake.delta), &Vec::from_iter(fake.eik))?;
            Ok(obj.total)
        },
        cfg,
    )?;

    let fake = {
        let mut g = Graph::new();
        let vars = gen.bind(&mut g, false);
        let f = fake_patch(&gen, &mut g, &vars, &batch, &ids, (p, p), &[])?;
        g.value(f.image).clone()
    };
    let blocks: Vec<(String, Tensor)> = (0..disc.params.len())
        .map(|i| (disc.params.name(i).to_string(), disc.params.get(i).clone()))
        .collect();
    let discriminator = gradcheck(
        &blocks,
        |g, vars| Ok(disc_objective(&disc, g, vars, &real, &fake, &seg, &ids)?.0),
        cfg,
    )?;
    Ok(ModelGradcheck {
        generator,
        discriminator,
    })
}
