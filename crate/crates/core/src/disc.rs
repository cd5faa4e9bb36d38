//! Semantic discriminator: fashion map from segmentation and text,
//! conditional real/fake logit, and the adversarial and shape losses.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Graph, Tensor, Var};
use crate::body::NUM_PARTS;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::text::init_embeddings;

/// Segmentation classes: background plus one per body part.
pub const SEG_CLASSES: usize = NUM_PARTS + 1;
pub const OFF_WEIGHT: f64 = 1.5;
pub const EIK_WEIGHT: f64 = 0.5;

const STRIDE2: ConvSpec = ConvSpec { stride: 2, pad: 1 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    /// Output channels of the four stride-2 image convolutions.
    pub widths: [usize; 4],
    /// Channels of the segmentation feature `e`.
    pub seg_dim: usize,
    pub word_dim: usize,
    pub slope: f64,
    /// R1 weight λ.
    pub r1_weight: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            widths: [32, 64, 128, 256],
            seg_dim: 32,
            word_dim: 64,
            slope: 0.2,
            r1_weight: 10.0,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.seg_dim == 0 || self.word_dim == 0 {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        if !(self.r1_weight >= 0.0) || !(self.slope >= 0.0) {
            return Err(Error::Config("r1_weight and slope must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `softplus(−D(real)) + softplus(D(fake)) + λ·R1`.
pub fn loss_d(real_logit: f64, fake_logit: f64, r1: f64, lambda: f64) -> f64 {
    softplus(-real_logit) + softplus(fake_logit) + lambda * r1
}

/// Non-saturating generator loss `softplus(−D(fake))`.
pub fn loss_g(fake_logit: f64) -> f64 {
    softplus(-fake_logit)
}

/// Mean of squared Δd.
pub fn loss_off(delta_ds: &[f64]) -> Result<f64> {
    if delta_ds.is_empty() {
        return Err(Error::invalid("offset loss over an empty batch"));
    }
    Ok(delta_ds.iter().map(|d| d * d).sum::<f64>() / delta_ds.len() as f64)
}

/// Mean of `‖∇Δd‖²` over points.
pub fn loss_eik(gradients: &[Vec3]) -> Result<f64> {
    if gradients.is_empty() {
        return Err(Error::invalid("eikonal loss over an empty batch"));
    }
    Ok(gradients.iter().map(|g| g.dot(*g)).sum::<f64>() / gradients.len() as f64)
}

pub fn total_generator_loss(adv: f64, off: f64, eik: f64) -> f64 {
    adv + OFF_WEIGHT * off + EIK_WEIGHT * eik
}

/// Fashion map nodes.
#[derive(Clone, Copy, Debug)]
pub struct FashionMap {
    /// `[d_w, H/4, W/4]`.
    pub q: Var,
    /// Attention over words per feature pixel, `[(H/4·W/4) × L]`.
    pub attention: Var,
}

/// Pre-activations of one discriminator pass, kept for tangent passes.
#[derive(Clone, Debug)]
pub struct DiscPass {
    pub logit: Var,
    pre: Vec<Var>,
    q_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscConfig,
    pub params: ParamSet,
    convs: Vec<(usize, usize)>,
    seg: Vec<(usize, usize)>,
    attn: usize,
    embed: usize,
    head_w: usize,
    head_b: usize,
}

fn conv_init(o: usize, c: usize, slope: f64, rng: &mut Rng) -> Tensor {
    let fan = (c * 9) as f64;
    let bound = (6.0 / ((1.0 + slope * slope) * fan)).sqrt();
    let data = (0..o * c * 9).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![o, c, 3, 3], data).expect("shape")
}

impl Discriminator {
    pub fn new(config: DiscConfig, vocab_len: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamSet::new();
        let embed = params.add("disc.embed", init_embeddings(vocab_len, c.word_dim, rng));
        let mut seg = Vec::new();
        let mut cin = SEG_CLASSES;
        for i in 0..2 {
            let w = params.add(format!("disc.seg{i}_w"), conv_init(c.seg_dim, cin, c.slope, rng));
            let b = params.add(format!("disc.seg{i}_b"), Tensor::zeros(&[c.seg_dim]));
            seg.push((w, b));
            cin = c.seg_dim;
        }
        let bound = 1.0 / (c.seg_dim as f64).sqrt();
        let attn_data = (0..c.seg_dim * c.word_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        let attn = params.add("disc.attn", Tensor::new(vec![c.seg_dim, c.word_dim], attn_data)?);
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &w_out) in c.widths.iter().enumerate() {
            if i == 2 {
                cin += c.word_dim;
            }
            let w = params.add(format!("disc.conv{i}_w"), conv_init(w_out, cin, c.slope, rng));
            let b = params.add(format!("disc.conv{i}_b"), Tensor::zeros(&[w_out]));
            convs.push((w, b));
            cin = w_out;
        }
        let hb = 1.0 / (cin as f64).sqrt();
        let head = (0..cin).map(|_| rng.gen_range(-hb..=hb)).collect();
        let head_w = params.add("disc.head_w", Tensor::new(vec![cin, 1], head)?);
        let head_b = params.add("disc.head_b", Tensor::zeros(&[1]));
        Ok(Discriminator {
            config,
            params,
            convs,
            seg,
            attn,
            embed,
            head_w,
            head_b,
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    pub fn embed_index(&self) -> usize {
        self.embed
    }

    pub fn attn_index(&self) -> usize {
        self.attn
    }

    pub fn words(&self, g: &mut Graph, vars: &[Var], ids: &[usize]) -> Result<Var> {
        g.gather_rows(vars[self.embed], ids.to_vec())
    }

    /// `e = Conv(onehot(𝒮))`, `Q_ij = Σ_l softmax_l(e_ij W w_lᵀ) w_l`.
    pub fn fashion_map(&self, g: &mut Graph, vars: &[Var], onehot: Var, words: Var) -> Result<FashionMap> {
        let shape = g.value(onehot).shape().to_vec();
        if shape.len() != 3 || shape[0] != SEG_CLASSES {
            return Err(Error::shape(format!(
                "segmentation must be one-hot [{SEG_CLASSES}, H, W], got {shape:?}"
            )));
        }
        let mut h = onehot;
        for (i, &(w, b)) in self.seg.iter().enumerate() {
            h = g.conv2d(h, vars[w], Some(vars[b]), STRIDE2)?;
            if i + 1 < self.seg.len() {
                h = g.leaky_relu(h, self.config.slope);
            }
        }
        let es = g.value(h).shape().to_vec();
        let (de, hh, ww) = (es[0], es[1], es[2]);
        let flat = g.reshape(h, &[de, hh * ww])?;
        let e = g.transpose(flat);
        let key = g.matmul(e, vars[self.attn])?;
        let logits = g.matmul_nt(key, words)?;
        let attention = g.softmax_rows(logits);
        let ctx = g.matmul(attention, words)?;
        let ct = g.transpose(ctx);
        let dw = g.value(words).dims2().1;
        let q = g.reshape(ct, &[dw, hh, ww])?;
        Ok(FashionMap { q, attention })
    }

    /// `BC([Conv(R), Q])`: image `[3, H, W]` with `H`, `W` divisible by 16.
    pub fn logit(&self, g: &mut Graph, vars: &[Var], image: Var, q: Var) -> Result<DiscPass> {
        let shape = g.value(image).shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 || shape[1] % 16 != 0 || shape[2] % 16 != 0 {
            return Err(Error::shape(format!(
                "discriminator input must be [3, H, W] with H and W multiples of 16, got {shape:?}"
            )));
        }
        let q_shape = g.value(q).shape().to_vec();
        let mut h = image;
        let mut pre = Vec::with_capacity(self.convs.len());
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            if i == 2 {
                let hs = g.value(h).shape().to_vec();
                if q_shape.len() != 3 || q_shape[1..] != hs[1..] {
                    return Err(Error::shape(format!(
                        "fashion map {q_shape:?} does not match image features {hs:?}"
                    )));
                }
                h = concat_channels(g, h, q)?;
            }
            let a = g.conv2d(h, vars[w], Some(vars[b]), STRIDE2)?;
            pre.push(a);
            h = g.leaky_relu(a, self.config.slope);
        }
        let pooled = channel_mean(g, h)?;
        let l = g.matmul(pooled, vars[self.head_w])?;
        let logit = g.add_row(l, vars[self.head_b])?;
        let logit = g.reshape(logit, &[1])?;
        Ok(DiscPass { logit, pre, q_shape })
    }

    /// Directional derivative of the logit along a fixed image tangent,
    /// as a node that stays differentiable in the parameters.
    pub fn logit_jvp(&self, g: &mut Graph, vars: &[Var], pass: &DiscPass, tangent: &Tensor) -> Result<Var> {
        let slope = self.config.slope;
        let mut h = g.constant(tangent.clone());
        for (i, (&(w, _), a)) in self.convs.iter().zip(&pass.pre).enumerate() {
            if i == 2 {
                let zeros = g.constant(Tensor::zeros(&pass.q_shape));
                h = concat_channels(g, h, zeros)?;
            }
            let z = g.conv2d(h, vars[w], None, STRIDE2)?;
            let mask: Vec<f64> = g.data(*a).iter().map(|v| if *v > 0.0 { 1.0 } else { slope }).collect();
            let mask = g.constant(Tensor::new(g.value(*a).shape().to_vec(), mask)?);
            h = g.mul(z, mask)?;
        }
        let pooled = channel_mean(g, h)?;
        let l = g.matmul(pooled, vars[self.head_w])?;
        g.reshape(l, &[1])
    }

    /// `∇_image D` at the stored parameters.
    pub fn input_gradient(&self, image: &Tensor, q: &Tensor) -> Result<Tensor> {
        self.input_gradient_at(self.params.tensors(), image, q)
    }

    fn input_gradient_at(&self, params: &[Tensor], image: &Tensor, q: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
        let x = g.leaf(image.clone());
        let qv = g.constant(q.clone());
        let pass = self.logit(&mut g, &vars, x, qv)?;
        let grads = g.backward(pass.logit)?;
        Tensor::new(image.shape().to_vec(), grads.get_or_zeros(x, image.len()))
    }

    /// `‖∇_image D‖²` at a real image whose pass is `pass`. The value is
    /// exact and so is its parameter gradient, `2·gᵀ(∂g/∂params)`, obtained from
    /// `2·jvp(g) − const(‖g‖²)` with `g` held fixed.
    pub fn r1_node(&self, g: &mut Graph, vars: &[Var], pass: &DiscPass, image: Var, q: Var) -> Result<Var> {
        let params: Vec<Tensor> = vars.iter().map(|v| g.value(*v).clone()).collect();
        let grad = self.input_gradient_at(&params, g.value(image), g.value(q))?;
        let jvp = self.logit_jvp(g, vars, pass, &grad)?;
        let value = g.value(jvp).item();
        let twice = g.scale(jvp, 2.0);
        Ok(g.add_scalar(twice, -value))
    }

    /// Forward-only logit for an image `[3, H, W]`, a one-hot map and token ids.
    pub fn score(&self, image: &Tensor, onehot: &Tensor, ids: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let words = self.words(&mut g, &vars, ids)?;
        let seg = g.constant(onehot.clone());
        let fm = self.fashion_map(&mut g, &vars, seg, words)?;
        let x = g.constant(image.clone());
        let pass = self.logit(&mut g, &vars, x, fm.q)?;
        Ok(g.value(pass.logit).item())
    }
}

fn concat_channels(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let sa = g.value(a).shape().to_vec();
    let sb = g.value(b).shape().to_vec();
    let fa = g.reshape(a, &[sa[0], sa[1] * sa[2]])?;
    let fb = g.reshape(b, &[sb[0], sb[1] * sb[2]])?;
    let c = g.concat_rows(&[fa, fb])?;
    g.reshape(c, &[sa[0] + sb[0], sa[1], sa[2]])
}

/// Global mean over space: `[C, H, W]` → `[1 × C]`.
fn channel_mean(g: &mut Graph, h: Var) -> Result<Var> {
    let s = g.value(h).shape().to_vec();
    let flat = g.reshape(h, &[s[0], s[1] * s[2]])?;
    let sums = g.row_sum(flat);
    let mean = g.scale(sums, 1.0 / (s[1] * s[2]) as f64);
    Ok(g.transpose(mean))
}

/// Graph form of `softplus(−real) + softplus(fake) + λ·r1`.
pub fn loss_d_node(g: &mut Graph, real: Var, fake: Var, r1: Option<Var>, lambda: f64) -> Result<Var> {
    let nr = g.neg(real);
    let a = g.softplus(nr);
    let b = g.softplus(fake);
    let mut l = g.add(a, b)?;
    if let Some(r) = r1 {
        let w = g.scale(r, lambda);
        l = g.add(l, w)?;
    }
    Ok(l)
}

pub fn loss_g_node(g: &mut Graph, fake: Var) -> Var {
    let n = g.neg(fake);
    g.softplus(n)
}

pub fn total_generator_node(g: &mut Graph, adv: Var, off: Option<Var>, eik: Option<Var>) -> Result<Var> {
    let mut t = adv;
    if let Some(o) = off {
        let w = g.scale(o, OFF_WEIGHT);
        t = g.add(t, w)?;
    }
    if let Some(e) = eik {
        let w = g.scale(e, EIK_WEIGHT);
        t = g.add(t, w)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_anchors() {
        assert!((loss_d(0.0, 0.0, 0.0, 10.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(loss_d(60.0, -60.0, 0.0, 10.0) < 1e-25);
        assert_eq!(loss_g(0.0), 2f64.ln());
        assert!(loss_g(20.0) <= 2.1e-9);
        assert!(loss_g(1.0) < loss_g(0.0));
        assert_eq!(loss_off(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_off(&[1.0, -1.0]).unwrap(), 1.0);
        assert!((loss_off(&[0.3]).unwrap() - 0.09).abs() < 1e-15);
        assert!(loss_off(&[]).is_err());
        let linear = [Vec3::new(1.0, 0.0, 0.0); 4];
        assert_eq!(loss_eik(&linear).unwrap(), 1.0);
        assert_eq!(loss_eik(&[Vec3::ZERO]).unwrap(), 0.0);
        assert_eq!(total_generator_loss(1.0, 0.0, 0.0), 1.0);
        assert_eq!(total_generator_loss(0.0, 2.0, 4.0), 5.0);
        assert_eq!(total_generator_loss(1.0, 1.0, 1.0), 3.0);
    }

    #[test]
    fn swap_symmetry_without_r1() {
        for (r, f) in [(0.3, -1.2), (2.0, 4.0), (-7.0, 0.1)] {
            let a = loss_d(r, f, 0.0, 0.0);
            let b = loss_d(-f, -r, 0.0, 0.0);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }
}
