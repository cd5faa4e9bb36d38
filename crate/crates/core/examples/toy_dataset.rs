//! Generates a few toy records and writes them with their part maps.

use cch::body::BodyRig;
use cch::rays::{Camera, CameraConfig};
use cch::train::dataset::{generate_dataset, save_dataset, Grammar};

fn main() -> cch::Result<()> {
    let rig = BodyRig::humanoid();
    let camera = Camera::from_config(&CameraConfig::default())?;
    let records = generate_dataset(&rig, &Grammar::default(), &camera, [1.0; 3], 6, 0)?;
    for r in &records {
        println!("{:>2}: {}", r.seed, r.description);
    }
    let dir = std::env::temp_dir().join("cch_toy_dataset");
    save_dataset(&dir, &records)?;
    println!("wrote {} records to {}", records.len(), dir.display());
    Ok(())
}
