//! Trains on a 200-record toy set, then swaps the upper-garment color word
//! and checks that the rendered upper region moves toward the new color.
//!
//! `cargo run --release --example controllability -- train [config.toml] [minutes]`
//! `cargo run --release --example controllability -- probe <checkpoint>`

use std::time::{Duration, Instant};

use cch::config::TrainConfig;
use cch::train::checkpoint::{load_checkpoint, save_checkpoint};
use cch::train::{controllability_probe, dataset_for, rig_for, vocab_for, MetricsLog, Trainer};

fn probe(trainer: &Trainer) -> cch::Result<()> {
    let report = controllability_probe(trainer, 50, 1)?;
    for p in &report.probes {
        println!(
            "record {:3}  {} -> {}  distance {:.4} -> {:.4}  {}",
            p.record,
            p.from,
            p.to,
            p.before,
            p.after,
            if p.moved_toward() { "toward" } else { "away" }
        );
    }
    println!("moved toward target in {:.0}% of probes", 100.0 * report.success_rate());
    Ok(())
}

fn main() -> cch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let usage = || cch::Error::Config("usage: controllability train [config] [minutes] | probe <checkpoint>".into());
    match args.first().map(String::as_str) {
        Some("probe") => {
            let ckpt = load_checkpoint(args.get(1).ok_or_else(usage)?)?;
            let rig = rig_for(&ckpt.config)?;
            let records = dataset_for(&ckpt.config, &rig)?;
            let trainer = Trainer::from_checkpoint(&ckpt, rig, vocab_for(&ckpt.config)?, records)?;
            println!("checkpoint at step {}", trainer.step);
            probe(&trainer)
        }
        Some("train") => {
            let config = match args.get(1) {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::parse(include_str!("../configs/control.toml"))?,
            };
            let minutes: f64 = args.get(2).and_then(|m| m.parse().ok()).unwrap_or(120.0);
            let budget = Duration::from_secs_f64(minutes * 60.0);
            let rig = rig_for(&config)?;
            let records = dataset_for(&config, &rig)?;
            let mut trainer = Trainer::new(config.clone(), rig, vocab_for(&config)?, records)?;
            let out = config.output_dir.clone();
            std::fs::create_dir_all(&out)?;
            let mut log = MetricsLog::open(out.join("metrics.csv"))?;
            let start = Instant::now();
            while trainer.step < config.steps && start.elapsed() < budget {
                let m = trainer.step()?;
                log.write(&m)?;
                if m.step % config.checkpoint_every.max(1) == 0 {
                    log.flush()?;
                    save_checkpoint(&trainer.checkpoint(), out.join(format!("step_{:06}.bin", m.step)))?;
                    println!("step {} after {:.0?}: {}", m.step, start.elapsed(), m.csv_row());
                }
            }
            log.flush()?;
            save_checkpoint(&trainer.checkpoint(), out.join("final.bin"))?;
            println!("stopped at step {} after {:.0?}", trainer.step, start.elapsed());
            probe(&trainer)
        }
        _ => Err(usage()),
    }
}
