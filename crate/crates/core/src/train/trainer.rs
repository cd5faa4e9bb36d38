use std::path::Path;

use rand::seq::index;
use rand::Rng as _;

use super::adam::Adam;
use super::checkpoint::{save_checkpoint, Block, Checkpoint, R1_MODE};
use super::dataset::{generate_dataset, load_dataset, ToyRecord};
use super::metrics::{MetricsLog, StepMetrics};
use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{load_rig, BodyRig};
use crate::config::TrainConfig;
use crate::disc::{loss_d_node, loss_g_node, total_generator_node, Discriminator, SEG_CLASSES};
use crate::error::{Error, Result};
use crate::fields::Generator;
use crate::params::ParamSet;
use crate::rays::Camera;
use crate::render::{render_image, render_nodes, sample_batch, ImageBuffer, PartPoints, Rendered, SampleBatch, Scene};
use crate::rng::{self, Rng, RngState};
use crate::text::{encode, Vocabulary};

struct Prepared {
    ids: Vec<usize>,
    scene: Scene,
    record: ToyRecord,
}

/// Adversarial training state: both networks, their optimizers, and the
/// trainer's random stream.
pub struct Trainer {
    pub config: TrainConfig,
    pub rig: BodyRig,
    pub vocab: Vocabulary,
    pub gen: Generator,
    pub disc: Discriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub step: u64,
    rng: Rng,
    camera: Camera,
    data: Vec<Prepared>,
}

struct Crop {
    record: usize,
    row: usize,
    col: usize,
    seed: u64,
}

pub fn rig_for(config: &TrainConfig) -> Result<BodyRig> {
    match &config.rig {
        Some(p) => load_rig(p),
        None => Ok(BodyRig::humanoid()),
    }
}

pub fn vocab_for(config: &TrainConfig) -> Result<Vocabulary> {
    match &config.vocab {
        Some(p) => Vocabulary::load(p),
        None => Ok(Vocabulary::fashion()),
    }
}

/// Camera of the training resolution.
pub fn train_camera(config: &TrainConfig) -> Result<Camera> {
    let [h, w] = config.train_size;
    Ok(Camera::from_config(&config.camera)?.resized(w, h))
}

/// Records named by the config: loaded from `dataset.dir` when set,
/// generated otherwise.
pub fn dataset_for(config: &TrainConfig, rig: &BodyRig) -> Result<Vec<ToyRecord>> {
    if let Some(dir) = &config.dataset.dir {
        return load_dataset(dir);
    }
    let camera = train_camera(config)?;
    generate_dataset(
        rig,
        &config.dataset.grammar,
        &camera,
        config.render.background,
        config.dataset.count,
        config.dataset.seed,
    )
}

pub(crate) fn patch_pixels(width: usize, row: usize, col: usize, h: usize, w: usize) -> Vec<usize> {
    (row..row + h)
        .flat_map(|r| (col..col + w).map(move |c| r * width + c))
        .collect()
}

/// `k` sample points drawn without replacement from a batch (all of them
/// when `k` is 0), grouped by part.
pub(crate) fn eikonal_subset(batch: &SampleBatch, k: usize, rng: &mut Rng) -> Vec<(usize, PartPoints)> {
    let total = batch.point_count();
    let k = if k == 0 { total } else { k.min(total) };
    let mut chosen = index::sample(rng, total, k).into_vec();
    chosen.sort_unstable();
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = chosen.into_iter().peekable();
    for (b, pts) in batch.parts.iter().enumerate() {
        let end = start + pts.len();
        let mut local = Vec::new();
        while let Some(&i) = it.peek() {
            if i >= end {
                break;
            }
            local.push(i - start);
            it.next();
        }
        start = end;
        if !local.is_empty() {
            out.push((b, pts.select(&local)));
        }
    }
    out
}

pub(crate) struct FakePatch {
    /// `[3, h, w]`.
    pub image: Var,
    pub delta: Option<Var>,
    /// Mean `‖∇Δd‖²` over the eikonal subset.
    pub eik: Option<Var>,
}

pub(crate) fn fake_patch(
    gen: &Generator,
    g: &mut Graph,
    vars: &[Var],
    batch: &SampleBatch,
    ids: &[usize],
    (h, w): (usize, usize),
    eik: &[(usize, PartPoints)],
) -> Result<FakePatch> {
    let words = gen.words(g, vars, ids)?;
    let nodes = render_nodes(gen, g, vars, batch, words)?;
    let t = g.transpose(nodes.rgb);
    let image = g.reshape(t, &[3, h, w])?;
    let mut terms = Vec::with_capacity(eik.len());
    for (b, pts) in eik {
        let n = pts.len();
        let xhat = g.constant(Tensor::new(vec![n, 3], pts.xhat.clone())?);
        let dir = g.constant(Tensor::new(vec![n, 3], pts.dir.clone())?);
        let pass = gen.part_pass(g, vars, *b, xhat, dir, words)?;
        terms.push(gen.delta_gradient_sq(g, vars, *b, &pass, words)?);
    }
    let eik = if terms.is_empty() {
        None
    } else {
        let all = g.concat_rows(&terms)?;
        Some(g.mean(all))
    };
    Ok(FakePatch {
        image,
        delta: nodes.delta,
        eik,
    })
}

/// `loss_g` of a fake patch under discriminator leaves `vars`.
pub(crate) fn adversarial(disc: &Discriminator, g: &mut Graph, vars: &[Var], fake: Var, seg: &Tensor, ids: &[usize]) -> Result<Var> {
    let words = disc.words(g, vars, ids)?;
    let s = g.constant(seg.clone());
    let fm = disc.fashion_map(g, vars, s, words)?;
    let fp = disc.logit(g, vars, fake, fm.q)?;
    Ok(loss_g_node(g, fp.logit))
}

/// `loss_d` with R1 at the real patch, and the R1 value node.
pub(crate) fn disc_objective(
    disc: &Discriminator,
    g: &mut Graph,
    vars: &[Var],
    real: &Tensor,
    fake: &Tensor,
    seg: &Tensor,
    ids: &[usize],
) -> Result<(Var, Var)> {
    let words = disc.words(g, vars, ids)?;
    let s = g.constant(seg.clone());
    let fm = disc.fashion_map(g, vars, s, words)?;
    let x = g.constant(real.clone());
    let rp = disc.logit(g, vars, x, fm.q)?;
    let r1 = disc.r1_node(g, vars, &rp, x, fm.q)?;
    let f = g.constant(fake.clone());
    let fp = disc.logit(g, vars, f, fm.q)?;
    Ok((loss_d_node(g, rp.logit, fp.logit, Some(r1), disc.config.r1_weight)?, r1))
}

pub(crate) struct GeneratorObjective {
    pub total: Var,
    pub adv: Var,
    pub off: Option<Var>,
    pub eik: Option<Var>,
}

/// Batch means of each term and their weighted sum.
pub(crate) fn generator_objective(g: &mut Graph, adv: &[Var], deltas: &[Var], eiks: &[Var]) -> Result<GeneratorObjective> {
    let adv = mean_of(g, adv)?;
    let off = if deltas.is_empty() {
        None
    } else {
        let all = g.concat_rows(deltas)?;
        let sq = g.square(all);
        Some(g.mean(sq))
    };
    let eik = if eiks.is_empty() { None } else { Some(mean_of(g, eiks)?) };
    let total = total_generator_node(g, adv, off, eik)?;
    Ok(GeneratorObjective { total, adv, off, eik })
}

fn mean_of(g: &mut Graph, items: &[Var]) -> Result<Var> {
    let flat: Vec<Var> = items.iter().map(|v| g.reshape(*v, &[1, 1])).collect::<Result<_>>()?;
    let all = g.concat_rows(&flat)?;
    Ok(g.mean(all))
}

impl Trainer {
    pub fn new(config: TrainConfig, rig: BodyRig, vocab: Vocabulary, records: Vec<ToyRecord>) -> Result<Self> {
        config.validate()?;
        let gen = Generator::new(config.field.clone(), &rig, vocab.len(), &mut rng::stream(config.seed, 1))?;
        let disc = Discriminator::new(config.disc.clone(), vocab.len(), &mut rng::stream(config.seed, 2))?;
        let adam_g = Adam::new(&gen.params, config.lr_g, config.beta1, config.beta2, config.eps);
        let adam_d = Adam::new(&disc.params, config.lr_d, config.beta1, config.beta2, config.eps);
        let camera = train_camera(&config)?;
        if records.is_empty() {
            return Err(Error::invalid("training needs at least one record"));
        }
        let data = records
            .into_iter()
            .map(|record| {
                if (record.image.height, record.image.width) != (camera.height, camera.width) {
                    return Err(Error::invalid(format!(
                        "record is {}x{} but training renders at {}x{}",
                        record.image.height, record.image.width, camera.height, camera.width
                    )));
                }
                let ids = vocab.tokenize(&record.description, config.max_len)?;
                let scene = Scene::new(&rig, &record.shape, &record.pose, config.render.clone())?;
                Ok(Prepared { ids, scene, record })
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            rng: rng::stream(config.seed, 3),
            config,
            rig,
            vocab,
            gen,
            disc,
            adam_g,
            adam_d,
            step: 0,
            camera,
            data,
        })
    }

    /// Restores a trainer; `rig`, `vocab` and `records` must be the ones the
    /// checkpoint was trained with.
    pub fn from_checkpoint(ckpt: &Checkpoint, rig: BodyRig, vocab: Vocabulary, records: Vec<ToyRecord>) -> Result<Self> {
        if ckpt.r1_mode != R1_MODE {
            return Err(Error::format(format!("unsupported R1 mode {:?}", ckpt.r1_mode)));
        }
        let mut t = Trainer::new(ckpt.config.clone(), rig, vocab, records)?;
        restore(&mut t.gen.params, &mut t.adam_g, ckpt)?;
        restore(&mut t.disc.params, &mut t.adam_d, ckpt)?;
        if t.gen.params.len() + t.disc.params.len() != ckpt.blocks.len() {
            return Err(Error::format("checkpoint has blocks the networks do not use"));
        }
        t.adam_g.t = ckpt.adam_steps_g;
        t.adam_d.t = ckpt.adam_steps_d;
        t.step = ckpt.step;
        t.rng = ckpt.rng.restore();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut blocks = Vec::with_capacity(self.gen.params.len() + self.disc.params.len());
        for (ps, adam) in [(&self.gen.params, &self.adam_g), (&self.disc.params, &self.adam_d)] {
            for i in 0..ps.len() {
                blocks.push(Block {
                    name: ps.name(i).to_string(),
                    value: ps.get(i).clone(),
                    m: adam.m[i].clone(),
                    v: adam.v[i].clone(),
                });
            }
        }
        blocks.sort_by(|a, b| a.name.cmp(&b.name));
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            r1_mode: R1_MODE.to_string(),
            adam_steps_g: self.adam_g.t,
            adam_steps_d: self.adam_d.t,
            blocks,
        }
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn records(&self) -> impl Iterator<Item = &ToyRecord> {
        self.data.iter().map(|d| &d.record)
    }

    /// Renders record `i` (its pose, shape and description) at the training
    /// resolution.
    pub fn render_record(&self, i: usize, seed: u64) -> Result<Rendered> {
        let d = self.data.get(i).ok_or_else(|| Error::invalid(format!("no record {i}")))?;
        self.render_description(i, &d.record.description, seed)
    }

    /// Renders record `i`'s body under another description.
    pub fn render_description(&self, i: usize, description: &str, seed: u64) -> Result<Rendered> {
        let d = self.data.get(i).ok_or_else(|| Error::invalid(format!("no record {i}")))?;
        let text = encode(description, &self.vocab, self.gen.embeddings(), self.config.max_len)?;
        render_image(&self.gen, &d.scene, &self.camera, &text, seed)
    }

    fn crop_size(&self) -> (usize, usize) {
        let [h, w] = self.config.patch.unwrap_or(self.config.train_size);
        (h, w)
    }

    fn draw_crops(&mut self) -> Vec<Crop> {
        let (ph, pw) = self.crop_size();
        let (h, w) = (self.camera.height, self.camera.width);
        (0..self.config.batch)
            .map(|_| Crop {
                record: self.rng.gen_range(0..self.data.len()),
                row: self.rng.gen_range(0..=h - ph),
                col: self.rng.gen_range(0..=w - pw),
                seed: self.rng.gen(),
            })
            .collect()
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let crops = self.draw_crops();
        let (ph, pw) = self.crop_size();
        let mix = (self.gen.config.mix_m, self.gen.config.mix_n);
        let width = self.camera.width;

        let mut gg = Graph::new();
        let gv = self.gen.bind(&mut gg, true);
        let mut fakes = Vec::with_capacity(crops.len());
        let mut deltas = Vec::new();
        let mut eiks = Vec::new();
        for c in &crops {
            let pixels = patch_pixels(width, c.row, c.col, ph, pw);
            let d = &self.data[c.record];
            let batch = sample_batch(&d.scene, &self.camera, &pixels, c.seed, mix)?;
            let subset = eikonal_subset(&batch, self.config.eik_points, &mut self.rng);
            let fake = fake_patch(&self.gen, &mut gg, &gv, &batch, &d.ids, (ph, pw), &subset)?;
            fakes.push(fake.image);
            deltas.extend(fake.delta);
            eiks.extend(fake.eik);
        }
        let inputs: Vec<(Tensor, Tensor, Tensor)> = crops
            .iter()
            .zip(&fakes)
            .map(|(c, f)| {
                let rec = &self.data[c.record].record;
                let real = rec.image.crop(c.row, c.col, ph, pw)?.to_chw();
                let seg = rec.segmentation.crop(c.row, c.col, ph, pw)?.one_hot(SEG_CLASSES);
                Ok((real, seg, gg.value(*f).clone()))
            })
            .collect::<Result<_>>()?;

        let mut dg = Graph::new();
        let dv = self.disc.bind(&mut dg, true);
        let mut d_terms = Vec::new();
        let mut r1s = Vec::new();
        for (c, (real, seg, fake)) in crops.iter().zip(&inputs) {
            let (l, r1) = disc_objective(&self.disc, &mut dg, &dv, real, fake, seg, &self.data[c.record].ids)?;
            d_terms.push(l);
            r1s.push(r1);
        }
        let loss_d = mean_of(&mut dg, &d_terms)?;
        let r1 = mean_of(&mut dg, &r1s)?;
        let grads = dg.backward(loss_d)?;
        self.adam_d.step(&mut self.disc.params, &grads, &dv);

        let dc = self.disc.bind(&mut gg, false);
        let mut adv = Vec::with_capacity(crops.len());
        for ((c, (_, seg, _)), fake) in crops.iter().zip(&inputs).zip(&fakes) {
            adv.push(adversarial(&self.disc, &mut gg, &dc, *fake, seg, &self.data[c.record].ids)?);
        }
        let objective = generator_objective(&mut gg, &adv, &deltas, &eiks)?;
        let grads = gg.backward(objective.total)?;
        self.adam_g.step(&mut self.gen.params, &grads, &gv);

        self.step += 1;
        let metrics = StepMetrics {
            step: self.step,
            loss_d: dg.value(loss_d).item(),
            loss_g: gg.value(objective.adv).item(),
            loss_off: objective.off.map_or(0.0, |v| gg.value(v).item()),
            loss_eik: objective.eik.map_or(0.0, |v| gg.value(v).item()),
            r1: dg.value(r1).item(),
        };
        if !metrics.is_finite() || !self.gen.params.is_finite() || !self.disc.params.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                detail: metrics.csv_row(),
            });
        }
        Ok(metrics)
    }

    /// PSNR of record `i` rendered by the generator against its image.
    pub fn record_psnr(&self, i: usize, seed: u64) -> Result<f64> {
        let r = self.render_record(i, seed)?;
        super::metrics::psnr(&r.image, &self.data[i].record.image)
    }

    pub fn real_image(&self, i: usize) -> Option<&ImageBuffer> {
        self.data.get(i).map(|d| &d.record.image)
    }
}

fn restore(params: &mut ParamSet, adam: &mut Adam, ckpt: &Checkpoint) -> Result<()> {
    ckpt.apply_to(params)?;
    for i in 0..params.len() {
        let b = ckpt.block(params.name(i)).expect("checked by apply_to");
        adam.m[i] = b.m.clone();
        adam.v[i] = b.v.clone();
    }
    Ok(())
}

/// Runs training to `config.steps`, writing `metrics.csv`, periodic
/// `step_XXXXXX.bin` checkpoints and `final.bin` under `config.output_dir`.
/// With `resume`, continues from that checkpoint, whose config then wins
/// except for `steps` and `output_dir`.
pub fn train(config: &TrainConfig, resume: Option<&Path>) -> Result<Checkpoint> {
    let mut trainer = match resume {
        Some(p) => {
            let mut ckpt = super::checkpoint::load_checkpoint(p)?;
            ckpt.config.steps = config.steps;
            ckpt.config.output_dir = config.output_dir.clone();
            let rig = rig_for(&ckpt.config)?;
            let vocab = vocab_for(&ckpt.config)?;
            let records = dataset_for(&ckpt.config, &rig)?;
            Trainer::from_checkpoint(&ckpt, rig, vocab, records)?
        }
        None => {
            let rig = rig_for(config)?;
            let vocab = vocab_for(config)?;
            let records = dataset_for(config, &rig)?;
            Trainer::new(config.clone(), rig, vocab, records)?
        }
    };
    let out = trainer.config.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let mut log = MetricsLog::open(out.join("metrics.csv"))?;
    while trainer.step < trainer.config.steps {
        let m = trainer.step()?;
        log.write(&m)?;
        let every = trainer.config.checkpoint_every;
        if every > 0 && m.step % every == 0 {
            log.flush()?;
            save_checkpoint(&trainer.checkpoint(), out.join(format!("step_{:06}.bin", m.step)))?;
        }
    }
    log.flush()?;
    let ckpt = trainer.checkpoint();
    save_checkpoint(&ckpt, out.join("final.bin"))?;
    Ok(ckpt)
}
