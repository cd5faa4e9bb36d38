//! Finite-difference check of the generator and discriminator objectives.

use std::time::Instant;

use cch::autodiff::GradcheckConfig;
use cch::check::model_gradcheck;
use cch::config::TrainConfig;

fn main() -> cch::Result<()> {
    let config = TrainConfig::default();
    let start = Instant::now();
    let step = std::env::var("CCH_FD_STEP").ok().and_then(|s| s.parse().ok()).unwrap_or(1e-5);
    let report = model_gradcheck(&config, &GradcheckConfig { step, ..Default::default() })?;
    println!("generator\n{}\n", report.generator);
    println!("discriminator\n{}\n", report.discriminator);
    println!("{:.1?}", start.elapsed());
    Ok(())
}
