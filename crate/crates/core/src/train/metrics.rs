use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::ImageBuffer;

pub const METRICS_HEADER: &str = "step,loss_d,loss_g,loss_off,loss_eik,r1";

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(format!(
            "psnr: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Scalar losses of one training iteration. `loss_g` is the adversarial
/// generator term alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_off: f64,
    pub loss_eik: f64,
    pub r1: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.loss_d, self.loss_g, self.loss_off, self.loss_eik, self.r1
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.loss_d, self.loss_g, self.loss_off, self.loss_eik, self.r1]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Append-only CSV log; the header is written when the file is new.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(MetricsLog { out })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_row())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_anchors() {
        let black = ImageBuffer::filled(4, 2, [0.0; 3]);
        let white = ImageBuffer::filled(4, 2, [1.0; 3]);
        assert_eq!(psnr(&black, &black).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let grey = ImageBuffer::filled(4, 2, [0.1; 3]);
        assert!((psnr(&black, &grey).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&black, &ImageBuffer::filled(2, 4, [0.0; 3])).is_err());
    }
}
