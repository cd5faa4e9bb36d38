//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::GradcheckConfig;
use crate::body::{BodyRig, PoseParams, ShapeParams};
use crate::check::model_gradcheck;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fields::Generator;
use crate::math::Vec3;
use crate::rays::Camera;
use crate::render::{render_image, ImageBuffer, Scene};
use crate::rng;
use crate::text::encode;
use crate::train::checkpoint::load_checkpoint;
use crate::train::dataset::{generate_dataset, sample_pose, save_dataset};
use crate::train::{psnr, rig_for, train, train_camera, vocab_for};

#[derive(Parser, Debug)]
#[command(name = "cch", version, about = "Text-conditioned compositional human renderer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a toy dataset of rendered records.
    DatasetGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarial training.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory for metrics and checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one frame from a description and a pose.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        text: String,
        /// Pose file (one axis-angle triple per joint) or `random`.
        #[arg(long, default_value = "random")]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Renderer threads; defaults to all available cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Finite-difference check of the generator and discriminator gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
    /// PSNR between two PPM images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output resolution as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_size)]
    size: Option<[usize; 2]>,
    /// Camera position as x,y,z.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    camera: Option<[f64; 3]>,
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once('x').ok_or("expected HEIGHTxWIDTH")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok([h, w])
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected x,y,z".to_string())
}

impl Common {
    fn load(&self) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        self.apply(base)
    }

    /// Flags win over file values.
    fn apply(&self, mut c: TrainConfig) -> Result<TrainConfig> {
        if let Some(s) = self.seed {
            c.seed = s;
            c.dataset.seed = s;
        }
        if let Some(p) = self.camera {
            c.camera.position = p;
        }
        c.validate()?;
        Ok(c)
    }

    /// Camera for rendering: the config camera, resized by `--size`.
    fn camera(&self, c: &TrainConfig) -> Result<Camera> {
        let cam = Camera::from_config(&c.camera)?;
        Ok(match self.size {
            Some([h, w]) => cam.resized(w, h),
            None => cam,
        })
    }
}

/// Axis-angle triples, one line per joint; `#` starts a comment.
pub fn parse_pose(text: &str, joints: usize) -> Result<PoseParams> {
    let mut theta = Vec::with_capacity(joints);
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::format(format!("pose line {}: expected three numbers", n + 1)))?;
        let [x, y, z] = <[f64; 3]>::try_from(v)
            .map_err(|_| Error::format(format!("pose line {}: expected three numbers", n + 1)))?;
        theta.push(Vec3::new(x, y, z));
    }
    if theta.len() != joints {
        return Err(Error::format(format!("pose has {} joints, rig has {joints}", theta.len())));
    }
    let pose = PoseParams { theta };
    if !pose.is_finite() {
        return Err(Error::format("pose contains non-finite values"));
    }
    Ok(pose)
}

fn load_pose(spec: &str, rig: &BodyRig, seed: u64) -> Result<PoseParams> {
    if spec == "random" {
        return Ok(sample_pose(rig, &mut rng::stream(seed, 5)));
    }
    parse_pose(&std::fs::read_to_string(spec)?, rig.joint_count())
}

fn render(common: &Common, text: &str, pose: &str, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let (config, ckpt) = match checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            (common.apply(ckpt.config.clone())?, Some(ckpt))
        }
        None => (common.load()?, None),
    };
    let rig = rig_for(&config)?;
    let vocab = vocab_for(&config)?;
    let mut gen = Generator::new(config.field.clone(), &rig, vocab.len(), &mut rng::stream(config.seed, 1))?;
    if let Some(ckpt) = &ckpt {
        ckpt.apply_to(&mut gen.params)?;
    }
    let camera = common.camera(&config)?;
    let pose = load_pose(pose, &rig, config.seed)?;
    let scene = Scene::new(&rig, &ShapeParams::zeros(rig.shape_count()), &pose, config.render.clone())?;
    let fashion = encode(text, &vocab, gen.embeddings(), config.max_len)?;
    let start = Instant::now();
    let frame = render_image(&gen, &scene, &camera, &fashion, config.seed)?;
    frame.image.save_ppm(out)?;
    println!(
        "wrote {} ({}x{}) in {:.3} s",
        out.display(),
        camera.height,
        camera.width,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DatasetGen { common, count, out } => {
            let mut config = common.load()?;
            if let Some(n) = count {
                config.dataset.count = n;
            }
            if let Some([h, w]) = common.size {
                config.train_size = [h, w];
            }
            let rig = rig_for(&config)?;
            let camera = train_camera(&config)?;
            let records = generate_dataset(
                &rig,
                &config.dataset.grammar,
                &camera,
                config.render.background,
                config.dataset.count,
                config.dataset.seed,
            )?;
            save_dataset(&out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Train {
            common,
            steps,
            out,
            resume,
        } => {
            let mut config = common.load()?;
            if let Some(s) = steps {
                config.steps = s;
            }
            if let Some(o) = out {
                config.output_dir = o;
            }
            if let Some([h, w]) = common.size {
                config.train_size = [h, w];
                config.validate()?;
            }
            let ckpt = train(&config, resume.as_deref())?;
            println!(
                "trained to step {}; checkpoint {}",
                ckpt.step,
                config.output_dir.join("final.bin").display()
            );
        }
        Command::Render {
            common,
            text,
            pose,
            out,
            checkpoint,
            threads,
        } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            pool.install(|| render(&common, &text, &pose, &out, checkpoint.as_deref()))?;
        }
        Command::Gradcheck { common, probes } => {
            let config = common.load()?;
            let cfg = GradcheckConfig {
                probes,
                seed: config.seed,
                ..Default::default()
            };
            let report = model_gradcheck(&config, &cfg)?;
            println!("generator\n{}\n", report.generator);
            println!("discriminator\n{}", report.discriminator);
            println!("max relative error {:.3e}", report.max_rel_error());
            if !report.passed() {
                return Err(Error::Numeric(format!(
                    "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
                    report.max_rel_error(),
                    cfg.tolerance
                )));
            }
        }
        Command::Metrics { a, b } => {
            let v = psnr(&ImageBuffer::load_ppm(&a)?, &ImageBuffer::load_ppm(&b)?)?;
            if v.is_infinite() {
                println!("inf");
            } else {
                println!("{v:.4}");
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_file_parses_and_validates() {
        let text = "# rest\n".to_string() + &"0 0 0\n".repeat(15) + "0.1 -0.2 0.3 # wrist\n";
        let p = parse_pose(&text, 16).unwrap();
        assert_eq!(p.theta[15], Vec3::new(0.1, -0.2, 0.3));
        assert!(parse_pose("0 0 0\n", 16).is_err());
        assert!(parse_pose(&"0 0\n".repeat(16), 16).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["cch", "render", "--bogus"]), 1);
        assert_eq!(run(["cch"]), 1);
        assert_eq!(run(["cch", "metrics", "--a", "/nonexistent/a.ppm", "--b", "/nonexistent/b.ppm"]), 2);
    }

    #[test]
    fn size_and_vector_flags() {
        assert_eq!(parse_size("128x64").unwrap(), [128, 64]);
        assert!(parse_size("128").is_err());
        assert_eq!(parse_vec3("0,-1.5,2").unwrap(), [0.0, -1.5, 2.0]);
    }
}
