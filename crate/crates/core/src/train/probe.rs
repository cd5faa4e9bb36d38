//! Text-controllability probe: swap the upper garment's color word and
//! measure where the rendered upper region moves.

use rand::Rng as _;

use super::dataset::{rasterize, region, Region, COLORS, PALETTE};
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub record: usize,
    pub from: usize,
    pub to: usize,
    /// Distance of the upper-region mean color to the target palette entry,
    /// before and after the swap.
    pub before: f64,
    pub after: f64,
}

impl ProbeResult {
    pub fn moved_toward(&self) -> bool {
        self.after < self.before
    }
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub probes: Vec<ProbeResult>,
}

impl ProbeReport {
    pub fn success_rate(&self) -> f64 {
        let ok = self.probes.iter().filter(|p| p.moved_toward()).count();
        ok as f64 / self.probes.len().max(1) as f64
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Replaces the upper garment's color word in a description.
pub fn swap_upper_color(description: &str, to: usize) -> Result<String> {
    let words: Vec<&str> = description.split_whitespace().collect();
    let upper = words
        .iter()
        .position(|w| *w == "upper")
        .ok_or_else(|| Error::invalid("description has no upper garment"))?;
    let k = words[..upper]
        .iter()
        .rposition(|w| COLORS.contains(w))
        .ok_or_else(|| Error::invalid("upper garment has no color word"))?;
    let mut out: Vec<&str> = words.clone();
    out[k] = COLORS[to];
    Ok(out.join(" "))
}

/// `count` probes over the trainer's records: a record and a different
/// target color drawn from `seed`, both renders with the same ray seed.
pub fn controllability_probe(trainer: &Trainer, count: usize, seed: u64) -> Result<ProbeReport> {
    let records: Vec<_> = trainer.records().collect();
    let mut r = rng::seeded(seed);
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let i = r.gen_range(0..records.len());
        let rec = records[i];
        let from = rec.outfit.upper.color;
        let to = (from + r.gen_range(1..COLORS.len())) % COLORS.len();
        let hits = rasterize(&trainer.rig, &rec.pose, trainer.camera())?;
        let mask: Vec<bool> = hits
            .iter()
            .map(|h| h.is_some_and(|(b, _, s)| region(&rec.outfit, b, s) == Region::Upper))
            .collect();
        let width = trainer.camera().width;
        let mean = |desc: &str| -> Result<[f64; 3]> {
            let img = trainer.render_description(i, desc, seed)?.image;
            img.mean_where(|row, col| mask[row * width + col])
                .ok_or_else(|| Error::invalid("record has no visible upper garment"))
        };
        let target = PALETTE[to];
        let before = distance(mean(&rec.description)?, target);
        let after = distance(mean(&swap_upper_color(&rec.description, to)?)?, target);
        probes.push(ProbeResult {
            record: i,
            from,
            to,
            before,
            after,
        });
    }
    Ok(ProbeReport { probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swaps_only_the_upper_color() {
        let d = "long-sleeve denim floral red upper long cotton pure color red lower";
        assert_eq!(
            swap_upper_color(d, 2).unwrap(),
            "long-sleeve denim floral blue upper long cotton pure color red lower"
        );
    }
}
