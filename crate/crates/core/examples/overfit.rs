//! Overfits the generator to a single toy record and reports PSNR against
//! it as training proceeds.
//!
//! `cargo run --release --example overfit -- [config.toml] [steps]`

use std::time::Instant;

use cch::config::TrainConfig;
use cch::train::{dataset_for, rig_for, vocab_for, Trainer};

fn main() -> cch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = match args.first() {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::parse(include_str!("../configs/overfit.toml"))?,
    };
    if let Some(s) = args.get(1) {
        config.steps = s.parse().map_err(|_| cch::Error::Config("steps must be an integer".into()))?;
    }
    config.dataset.count = 1;
    let rig = rig_for(&config)?;
    let records = dataset_for(&config, &rig)?;
    println!("record: {}", records[0].description);
    let mut trainer = Trainer::new(config.clone(), rig, vocab_for(&config)?, records)?;
    let report = (config.steps / 20).max(1);
    let start = Instant::now();
    println!("step  loss_d  loss_g  off  eik  psnr  elapsed");
    while trainer.step < config.steps {
        let m = trainer.step()?;
        if m.step % report == 0 || m.step == config.steps {
            let psnr = trainer.record_psnr(0, 0)?;
            println!(
                "{} {:.4} {:.4} {:.2e} {:.2e} {:.2} {:.1?}",
                m.step,
                m.loss_d,
                m.loss_g,
                m.loss_off,
                m.loss_eik,
                psnr,
                start.elapsed()
            );
        }
    }
    let r = trainer.render_record(0, 0)?;
    r.image.save_ppm(std::env::temp_dir().join("cch_overfit.ppm"))?;
    trainer.real_image(0).unwrap().save_ppm(std::env::temp_dir().join("cch_overfit_real.ppm"))?;
    Ok(())
}
