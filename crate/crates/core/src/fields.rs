//! Per-part SIREN fields over box-normalized coordinates, SDF-to-density
//! conversion and the multi-part mixture.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{Aabb, BodyRig, Capsule};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::text::{init_embeddings, FashionText};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Width of the per-point feature `f = Linear(x̂, d)`.
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub omega0: f64,
    pub word_dim: usize,
    pub mix_m: f64,
    /// Mixture exponent; must be even.
    pub mix_n: u32,
    /// Initial density scale α in metres.
    pub alpha_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            feature_dim: 64,
            hidden_dim: 64,
            hidden_layers: 3,
            omega0: 30.0,
            word_dim: 64,
            mix_m: 2.0,
            mix_n: 8,
            alpha_init: 0.0005,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.hidden_layers == 0 || self.word_dim == 0 {
            return Err(Error::Config("field widths and depth must be positive".into()));
        }
        if self.mix_n == 0 || self.mix_n % 2 != 0 {
            return Err(Error::Config(format!("mix_n must be a positive even integer, got {}", self.mix_n)));
        }
        if !(self.alpha_init > 0.0) || !(self.mix_m > 0.0) || !(self.omega0 > 0.0) {
            return Err(Error::Config("alpha_init, mix_m and omega0 must be positive".into()));
        }
        Ok(())
    }
}

/// Maps the box onto `[-1, 1]³`.
pub fn normalize_to_box(x: Vec3, b: &Aabb) -> Vec3 {
    Vec3([0, 1, 2].map(|i| (2.0 * x[i] - (b.max[i] + b.min[i])) / (b.max[i] - b.min[i])))
}

pub fn denormalize_from_box(xhat: Vec3, b: &Aabb) -> Vec3 {
    Vec3([0, 1, 2].map(|i| 0.5 * (b.max[i] + b.min[i]) + 0.5 * xhat[i] * (b.max[i] - b.min[i])))
}

/// `α⁻¹·sigmoid(−d/α)`.
pub fn density(d: f64, alpha: f64) -> f64 {
    let z = -d / alpha;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s / alpha
}

/// Capsule distance as a function of box coordinates, with its gradient
/// with respect to `x̂`.
pub fn base_sdf(xhat: Vec3, b: &Aabb, capsule: &Capsule) -> (f64, Vec3) {
    let half = b.extent() * 0.5;
    let (d, g) = capsule.sdf_grad(denormalize_from_box(xhat, b));
    (d, g.zip(half, |a, h| a * h))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample {
    pub color: [f64; 3],
    pub sigma: f64,
    pub delta_d: f64,
}

/// `u_b = exp(−m Σ x̂ᵢⁿ)`, normalized. When every weight underflows the
/// candidate closest to its box centre takes all the weight.
pub fn mixture_weights(xhats: &[Vec3], m: f64, n: u32) -> Result<Vec<f64>> {
    if xhats.is_empty() {
        return Err(Error::invalid("mixture over zero candidates"));
    }
    if n == 0 || n % 2 != 0 {
        return Err(Error::invalid(format!("mixture exponent {n} must be even")));
    }
    let u: Vec<f64> = xhats
        .iter()
        .map(|x| (-m * x.0.iter().map(|v| v.powi(n as i32)).sum::<f64>()).exp())
        .collect();
    let z: f64 = u.iter().sum();
    if z > 0.0 && z.is_finite() {
        return Ok(u.into_iter().map(|v| v / z).collect());
    }
    let nearest = xhats
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((0..xhats.len()).map(|i| if i == nearest { 1.0 } else { 0.0 }).collect())
}

pub fn mixture(candidates: &[(Vec3, RadianceSample)], m: f64, n: u32) -> Result<RadianceSample> {
    let xs: Vec<Vec3> = candidates.iter().map(|c| c.0).collect();
    let w = mixture_weights(&xs, m, n)?;
    let mut out = RadianceSample {
        color: [0.0; 3],
        sigma: 0.0,
        delta_d: 0.0,
    };
    for (wi, (_, s)) in w.iter().zip(candidates) {
        for c in 0..3 {
            out.color[c] += wi * s.color[c];
        }
        out.sigma += wi * s.sigma;
        out.delta_d += wi * s.delta_d;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct PartNet {
    lin_w: usize,
    lin_b: usize,
    attn: usize,
    layers: Vec<(usize, usize)>,
    color_w: usize,
    color_b: usize,
    delta_w: usize,
    delta_b: usize,
}

/// Graph nodes of one part evaluated on a batch of points.
#[derive(Clone, Debug)]
pub struct PartPass {
    pub feature: Var,
    /// Attention weights `[n × L]`.
    pub attention: Var,
    pub context: Var,
    /// Sine arguments `ω₀ z` of each layer.
    pub pre: Vec<Var>,
    pub color: Var,
    pub delta: Var,
    pub sdf: Var,
    pub sigma: Var,
}

/// All per-part networks plus the word embedding table and the density scale.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: FieldConfig,
    pub params: ParamSet,
    parts: Vec<PartNet>,
    embed: usize,
    log_alpha: usize,
    boxes: Vec<Aabb>,
    capsules: Vec<Capsule>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl Generator {
    pub fn new(config: FieldConfig, rig: &BodyRig, vocab_len: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamSet::new();
        let embed = params.add("gen.embed", init_embeddings(vocab_len, c.word_dim, rng));
        let log_alpha = params.add("gen.log_alpha", Tensor::scalar(c.alpha_init.ln()));
        let mut parts = Vec::with_capacity(rig.joint_count());
        for name in &rig.names {
            let p = |s: &str| format!("gen.{name}.{s}");
            let f = c.feature_dim;
            let lin_w = params.add(p("lin_w"), uniform(&[6, f], 1.0 / 6f64.sqrt(), rng));
            let lin_b = params.add(p("lin_b"), uniform(&[f], 1.0 / 6f64.sqrt(), rng));
            let attn = params.add(p("attn"), uniform(&[f, c.word_dim], 1.0 / (f as f64).sqrt(), rng));
            let mut layers = Vec::with_capacity(c.hidden_layers);
            let mut fan = f + c.word_dim;
            for l in 0..c.hidden_layers {
                let bound = if l == 0 {
                    1.0 / fan as f64
                } else {
                    (6.0 / fan as f64).sqrt() / c.omega0
                };
                let w = params.add(p(&format!("siren{l}_w")), uniform(&[fan, c.hidden_dim], bound, rng));
                let b = params.add(
                    p(&format!("siren{l}_b")),
                    uniform(&[c.hidden_dim], 1.0 / (fan as f64).sqrt(), rng),
                );
                layers.push((w, b));
                fan = c.hidden_dim;
            }
            let hb = 1.0 / (c.hidden_dim as f64).sqrt();
            let color_w = params.add(p("color_w"), uniform(&[c.hidden_dim, 3], hb, rng));
            let color_b = params.add(p("color_b"), uniform(&[3], hb, rng));
            let delta_w = params.add(p("delta_w"), Tensor::zeros(&[c.hidden_dim, 1]));
            let delta_b = params.add(p("delta_b"), Tensor::zeros(&[1]));
            parts.push(PartNet {
                lin_w,
                lin_b,
                attn,
                layers,
                color_w,
                color_b,
                delta_w,
                delta_b,
            });
        }
        Ok(Generator {
            config,
            params,
            parts,
            embed,
            log_alpha,
            boxes: rig.boxes.clone(),
            capsules: rig.capsules.clone(),
        })
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn boxes(&self) -> &[Aabb] {
        &self.boxes
    }

    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }

    pub fn alpha(&self) -> f64 {
        self.params.get(self.log_alpha).item().exp()
    }

    pub fn embeddings(&self) -> &Tensor {
        self.params.get(self.embed)
    }

    pub fn embed_index(&self) -> usize {
        self.embed
    }

    pub fn log_alpha_index(&self) -> usize {
        self.log_alpha
    }

    /// Index of the Δd head weight of part `b`.
    pub fn delta_head(&self, b: usize) -> (usize, usize) {
        (self.parts[b].delta_w, self.parts[b].delta_b)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Embedding rows of `ids` as a `[L × d_w]` node.
    pub fn words(&self, g: &mut Graph, vars: &[Var], ids: &[usize]) -> Result<Var> {
        g.gather_rows(vars[self.embed], ids.to_vec())
    }

    /// `α⁻¹·sigmoid(−d/α)` on the tape.
    pub fn density_node(&self, g: &mut Graph, vars: &[Var], d: Var) -> Result<Var> {
        let alpha = g.exp(vars[self.log_alpha]);
        let nd = g.neg(d);
        let z = g.div_scalar_var(nd, alpha)?;
        let s = g.sigmoid(z);
        g.div_scalar_var(s, alpha)
    }

    /// Part `b` at box coordinates `xhat[n×3]` seen along canonical
    /// directions `dir[n×3]`, attending over `words[L×d_w]`.
    pub fn part_pass(&self, g: &mut Graph, vars: &[Var], b: usize, xhat: Var, dir: Var, words: Var) -> Result<PartPass> {
        let net = &self.parts[b];
        let w0 = self.config.omega0;
        let (n, _) = g.value(xhat).dims2();
        let mut values = Vec::with_capacity(n);
        let mut jac = Vec::with_capacity(3 * n);
        for r in g.data(xhat).chunks(3) {
            let (d, grad) = base_sdf(Vec3([r[0], r[1], r[2]]), &self.boxes[b], &self.capsules[b]);
            values.push(d);
            jac.extend_from_slice(&grad.0);
        }
        let sdf = g.row_field(xhat, values, jac)?;

        let input = g.concat_cols(&[xhat, dir])?;
        let f = g.matmul(input, vars[net.lin_w])?;
        let feature = g.add_row(f, vars[net.lin_b])?;
        let key = g.matmul(feature, vars[net.attn])?;
        let logits = g.matmul_nt(key, words)?;
        let attention = g.softmax_rows(logits);
        let context = g.matmul(attention, words)?;
        let mut h = g.concat_cols(&[feature, context])?;
        let mut pre = Vec::with_capacity(net.layers.len());
        for &(w, bias) in &net.layers {
            let z = g.matmul(h, vars[w])?;
            let z = g.add_row(z, vars[bias])?;
            let z = g.scale(z, w0);
            pre.push(z);
            h = g.sin(z);
        }
        let c = g.matmul(h, vars[net.color_w])?;
        let c = g.add_row(c, vars[net.color_b])?;
        let color = g.sigmoid(c);
        let dd = g.matmul(h, vars[net.delta_w])?;
        let delta = g.add_row(dd, vars[net.delta_b])?;
        let d = g.add(sdf, delta)?;
        let sigma = self.density_node(g, vars, d)?;
        for (v, what) in [(color, "color"), (sigma, "density"), (delta, "delta sdf")] {
            if !g.value(v).is_finite() {
                return Err(Error::NonFinitePart {
                    part: b,
                    what: what.into(),
                });
            }
        }
        Ok(PartPass {
            feature,
            attention,
            context,
            pre,
            color,
            delta,
            sdf,
            sigma,
        })
    }

    /// `∂Δd/∂x̂` along each axis as `[n×1]` nodes, built from tangent
    /// passes so the result stays differentiable in the parameters.
    pub fn delta_gradient(&self, g: &mut Graph, vars: &[Var], b: usize, pass: &PartPass, words: Var) -> Result<[Var; 3]> {
        let net = &self.parts[b];
        let w0 = self.config.omega0;
        let (n, l) = g.value(pass.attention).dims2();
        let ones = g.constant(Tensor::filled(&[n, 1], 1.0));
        let cos: Vec<Var> = pass
            .pre
            .iter()
            .map(|z| {
                let c = g.cos(*z);
                g.scale(c, w0)
            })
            .collect();
        let mut out = Vec::with_capacity(3);
        for axis in 0..3 {
            let row = g.gather_rows(vars[net.lin_w], vec![axis])?;
            let fdot = g.matmul(ones, row)?;
            let kdot = g.matmul(fdot, vars[net.attn])?;
            let ldot = g.matmul_nt(kdot, words)?;
            let pl = g.mul(pass.attention, ldot)?;
            let s = g.row_sum(pl);
            let s = g.broadcast_cols(s, l);
            let centered = g.sub(ldot, s)?;
            let pdot = g.mul(pass.attention, centered)?;
            let cdot = g.matmul(pdot, words)?;
            let mut hdot = g.concat_cols(&[fdot, cdot])?;
            for (&(w, _), c) in net.layers.iter().zip(&cos) {
                let z = g.matmul(hdot, vars[w])?;
                hdot = g.mul(*c, z)?;
            }
            out.push(g.matmul(hdot, vars[net.delta_w])?);
        }
        Ok([out[0], out[1], out[2]])
    }

    /// `‖∇Δd‖²` per point of a pass, `[n×1]`.
    pub fn delta_gradient_sq(&self, g: &mut Graph, vars: &[Var], b: usize, pass: &PartPass, words: Var) -> Result<Var> {
        let grads = self.delta_gradient(g, vars, b, pass, words)?;
        let sq: Vec<Var> = grads.iter().map(|v| g.square(*v)).collect();
        let all = g.concat_cols(&sq)?;
        Ok(g.row_sum(all))
    }

    /// Single-point evaluation without a tape.
    pub fn part_forward(&self, b: usize, xhat: Vec3, dir: Vec3, words: &FashionText) -> Result<RadianceSample> {
        if b >= self.parts.len() {
            return Err(Error::invalid(format!("part {b} out of range")));
        }
        if !xhat.is_finite() || !dir.is_finite() {
            return Err(Error::invalid("non-finite point or direction"));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(Tensor::matrix(1, 3, xhat.0.to_vec())?);
        let d = g.constant(Tensor::matrix(1, 3, dir.0.to_vec())?);
        let w = g.constant(words.embeddings.clone());
        let pass = self.part_pass(&mut g, &vars, b, x, d, w)?;
        let c = g.data(pass.color);
        Ok(RadianceSample {
            color: [c[0], c[1], c[2]],
            sigma: g.data(pass.sigma)[0],
            delta_d: g.data(pass.delta)[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::text::{encode, Vocabulary};

    fn small() -> FieldConfig {
        FieldConfig {
            feature_dim: 8,
            hidden_dim: 8,
            hidden_layers: 2,
            word_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn box_normalization_examples() {
        let b = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(normalize_to_box(Vec3::new(0.5, 0.5, 0.5), &b), Vec3::ZERO);
        assert_eq!(normalize_to_box(b.max, &b), Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(normalize_to_box(Vec3::new(0.25, 0.5, 1.0), &b), Vec3::new(-0.5, 0.0, 1.0));
        let x = Vec3::new(0.1, 0.9, 0.3);
        assert!((denormalize_from_box(normalize_to_box(x, &b), &b) - x).norm() < 1e-15);
    }

    #[test]
    fn density_anchors() {
        let a = 0.01;
        assert_eq!(density(0.0, a), 0.5 / a);
        assert!(density(10.0 * a, a) <= 4.6e-5 / a);
        assert!(density(-1.0, a) > 0.999 / a && density(1.0, a) < 1e-12);
        assert!(density(-0.001, a) > density(0.001, a));
    }

    #[test]
    fn mixture_examples() {
        let w = mixture_weights(&[Vec3::ZERO, Vec3::new(0.5, 0.0, 0.0)], 2.0, 8).unwrap();
        let ub = (-2.0 * 0.5f64.powi(8)).exp();
        assert!((ub - 0.99222).abs() < 1e-5);
        assert!((w[0] - 1.0 / (1.0 + ub)).abs() < 1e-15);
        assert!((w[0] - 0.50195).abs() < 1e-5);

        let s = RadianceSample {
            color: [0.2, 0.4, 0.9],
            sigma: 3.0,
            delta_d: -0.1,
        };
        assert_eq!(mixture(&[(Vec3::new(0.7, -0.3, 0.2), s)], 2.0, 8).unwrap(), s);
        let sym = mixture(&[(Vec3::new(0.4, 0.0, 0.0), s), (Vec3::new(-0.4, 0.0, 0.0), s)], 2.0, 8).unwrap();
        assert!((sym.sigma - s.sigma).abs() < 1e-15);
        assert!(mixture(&[], 2.0, 8).is_err());
        assert!(mixture_weights(&[Vec3::ZERO], 2.0, 3).is_err());
    }

    #[test]
    fn underflow_falls_back_to_nearest_centre() {
        let w = mixture_weights(&[Vec3::new(40.0, 0.0, 0.0), Vec3::new(0.0, 30.0, 0.0)], 2.0, 8).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_delta_head_gives_template_sdf() {
        let rig = BodyRig::humanoid();
        let vocab = Vocabulary::fashion();
        let gen = Generator::new(small(), &rig, vocab.len(), &mut rng::seeded(5)).unwrap();
        let words = encode("red pure color upper", &vocab, gen.embeddings(), 32).unwrap();
        let xhat = Vec3::new(0.3, -0.2, 0.1);
        for b in [0, 5, 12] {
            let s = gen.part_forward(b, xhat, Vec3::new(0.0, 0.0, -1.0), &words).unwrap();
            assert_eq!(s.delta_d, 0.0);
            let (d, _) = base_sdf(xhat, &rig.boxes[b], &rig.capsules[b]);
            assert!((s.sigma - density(d, gen.alpha())).abs() <= 1e-9 * s.sigma.max(1.0));
            assert!(s.color.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn odd_mix_exponent_rejected() {
        let cfg = FieldConfig {
            mix_n: 7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
