use rand::Rng as _;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub probes: usize,
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Gradients below this magnitude are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            probes: 50,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    /// Coordinate of the worst probe with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn total_probes(&self) -> usize {
        self.blocks.iter().map(|b| b.probes).sum()
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.blocks {
            if b.probes == 0 {
                continue;
            }
            write!(f, "{:<32} probes={:<3} max_rel={:.3e}", b.name, b.probes, b.max_rel_error)?;
            if let Some((i, a, n)) = b.worst {
                write!(f, "  worst[{i}] analytic={a:.6e} numeric={n:.6e}")?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.1e}) {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences at randomly chosen coordinates.
///
/// `f` receives one differentiable leaf per block, in order. Probe
/// coordinates are drawn from a seeded stream: a block uniformly, then an
/// entry within it.
pub fn gradcheck<F>(blocks: &[(String, Tensor)], f: F, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = blocks.iter().map(|(_, t)| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape("gradcheck: function must be scalar"));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(blocks)
        .map(|(v, (_, t))| grads.get_or_zeros(*v, t.len()))
        .collect();

    let mut reports: Vec<BlockReport> = blocks
        .iter()
        .map(|(name, _)| BlockReport {
            name: name.clone(),
            probes: 0,
            max_rel_error: 0.0,
            worst: None,
        })
        .collect();
    let candidates: Vec<usize> = (0..blocks.len()).filter(|b| !blocks[*b].1.is_empty()).collect();
    if candidates.is_empty() {
        return Err(Error::invalid("gradcheck: no parameters"));
    }

    let mut rng = rng::seeded(cfg.seed);
    let mut values: Vec<Tensor> = blocks.iter().map(|(_, t)| t.clone()).collect();
    for _ in 0..cfg.probes {
        let b = candidates[rng.gen_range(0..candidates.len())];
        let i = rng.gen_range(0..values[b].len());
        let orig = values[b].data()[i];
        values[b].data_mut()[i] = orig + cfg.step;
        let plus = eval(&values)?;
        values[b].data_mut()[i] = orig - cfg.step;
        let minus = eval(&values)?;
        values[b].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[b][i];
        let err = relative_error(a, numeric, cfg.floor);
        let rep = &mut reports[b];
        rep.probes += 1;
        if err >= rep.max_rel_error {
            rep.max_rel_error = err;
            rep.worst = Some((i, a, numeric));
        }
    }
    Ok(GradcheckReport {
        blocks: reports,
        tolerance: cfg.tolerance,
    })
}
