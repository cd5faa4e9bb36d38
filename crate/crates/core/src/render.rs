//! Volume rendering of the posed, text-conditioned body.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, RaySegments, Tensor, Var};
use crate::body::{Aabb, BodyRig, PosedBody, PoseParams, ShapeParams, DEFAULT_NEIGHBORS};
use crate::error::{Error, Result};
use crate::fields::{mixture_weights, normalize_to_box, Generator, RadianceSample};
use crate::math::Vec3;
use crate::rays::{ray_boxes_interval, stratified_samples, Camera, Ray, DEFAULT_SAMPLES};
use crate::rng;
use crate::text::FashionText;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Stratified samples per ray.
    pub samples: usize,
    pub background: [f64; 3],
    /// Observed vertices used by inverse skinning.
    pub neighbors: usize,
    /// Rays per independently evaluated block.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples: DEFAULT_SAMPLES,
            background: [1.0; 3],
            neighbors: DEFAULT_NEIGHBORS,
            chunk_rays: 256,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.neighbors == 0 || self.chunk_rays == 0 {
            return Err(Error::Config("samples, neighbors and chunk_rays must be positive".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// RGB image with values in `[0, 1]`, row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        ImageBuffer { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` tensor.
    pub fn to_chw(&self) -> Tensor {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (p, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * n + p] = px[c];
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("shape")
    }

    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let [3, h, w] = *t.shape() else {
            return Err(Error::shape(format!("expected [3, H, W], got {:?}", t.shape())));
        };
        let n = h * w;
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = t.data()[c * n + p];
            }
        }
        ImageBuffer::from_data(w, h, data)
    }

    /// Sub-image with its top-left corner at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::shape("crop outside the image"));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for r in row..row + height {
            let s = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[s..s + width * 3]);
        }
        ImageBuffer::from_data(width, height, data)
    }

    /// Binary PPM, each channel `round(clamp(v, 0, 1)·255)`.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (fields, body) = netpbm_header(bytes, b"P6")?;
        let [w, h, maxval] = fields;
        if maxval != 255 {
            return Err(Error::format("only 8-bit PPM is supported"));
        }
        if body.len() != w * h * 3 {
            return Err(Error::format("PPM pixel data has the wrong length"));
        }
        let data = body.iter().map(|b| *b as f64 / 255.0).collect();
        ImageBuffer::from_data(w, h, data)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        ImageBuffer::from_ppm(&fs::read(path)?)
    }

    /// Mean color over the pixels where `mask` holds, if any.
    pub fn mean_where(&self, mask: impl Fn(usize, usize) -> bool) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for r in 0..self.height {
            for c in 0..self.width {
                if mask(r, c) {
                    let p = self.pixel(r, c);
                    (0..3).for_each(|k| acc[k] += p[k]);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| acc.map(|v| v / n as f64))
    }
}

fn netpbm_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<([usize; 3], &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::format("bad netpbm magic"));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format("truncated netpbm header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("bad netpbm header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("truncated netpbm header"));
    }
    Ok((fields, &bytes[pos + 1..]))
}

/// Per-pixel labels: 0 background, `b + 1` for body part `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape("one label per pixel"));
        }
        if labels.iter().any(|l| *l as usize > crate::body::NUM_PARTS) {
            return Err(Error::invalid("segmentation label out of range"));
        }
        Ok(SegmentationMap { width, height, labels })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::shape("crop outside the map"));
        }
        let mut labels = Vec::with_capacity(width * height);
        for r in row..row + height {
            let s = r * self.width + col;
            labels.extend_from_slice(&self.labels[s..s + width]);
        }
        SegmentationMap::new(width, height, labels)
    }

    /// `[classes, H, W]` indicator tensor.
    pub fn one_hot(&self, classes: usize) -> Tensor {
        let n = self.width * self.height;
        let mut out = vec![0.0; classes * n];
        for (p, l) in self.labels.iter().enumerate() {
            out[*l as usize * n + p] = 1.0;
        }
        Tensor::new(vec![classes, self.height, self.width], out).expect("shape")
    }

    /// Binary PGM holding the raw labels.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let ([w, h, _], body) = netpbm_header(bytes, b"P5")?;
        if body.len() != w * h {
            return Err(Error::format("PGM pixel data has the wrong length"));
        }
        SegmentationMap::new(w, h, body.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayColor {
    pub rgb: [f64; 3],
    pub opacity: f64,
}

/// Exponential-opacity quadrature over samples sorted by depth; the last
/// interval has length `cap`.
pub fn integrate_ray(samples: &[(f64, RadianceSample)], cap: f64, background: [f64; 3]) -> Result<RayColor> {
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::invalid("sample depths must be strictly increasing"));
    }
    if !(cap > 0.0) {
        return Err(Error::invalid("final interval must be positive"));
    }
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    for (i, (t, s)) in samples.iter().enumerate() {
        let delta = samples.get(i + 1).map_or(cap, |n| n.0 - t);
        let keep = (-s.sigma * delta).exp();
        let w = trans * (1.0 - keep);
        (0..3).for_each(|c| rgb[c] += w * s.color[c]);
        trans *= keep;
    }
    (0..3).for_each(|c| rgb[c] += trans * background[c]);
    Ok(RayColor {
        rgb,
        opacity: 1.0 - trans,
    })
}

/// Posed body state shared by every ray of a frame.
#[derive(Clone, Debug)]
pub struct Scene {
    pub posed: PosedBody,
    pub canonical: Vec<Aabb>,
    pub config: RenderConfig,
}

impl Scene {
    pub fn new(rig: &BodyRig, shape: &ShapeParams, pose: &PoseParams, config: RenderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Scene {
            posed: PosedBody::new(rig, shape, pose)?,
            canonical: rig.boxes.clone(),
            config,
        })
    }
}

/// Points of one part: box coordinates, canonical view directions, and
/// the sample row and mixture weight each contributes to.
#[derive(Clone, Debug, Default)]
pub struct PartPoints {
    pub sample: Vec<usize>,
    pub xhat: Vec<f64>,
    pub dir: Vec<f64>,
    pub weight: Vec<f64>,
}

impl PartPoints {
    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    fn push(&mut self, sample: usize, xhat: Vec3, dir: Vec3, weight: f64) {
        self.sample.push(sample);
        self.xhat.extend_from_slice(&xhat.0);
        self.dir.extend_from_slice(&dir.0);
        self.weight.push(weight);
    }

    /// Subset by entry index.
    pub fn select(&self, idx: &[usize]) -> PartPoints {
        let mut out = PartPoints::default();
        for &i in idx {
            out.sample.push(self.sample[i]);
            out.xhat.extend_from_slice(&self.xhat[i * 3..i * 3 + 3]);
            out.dir.extend_from_slice(&self.dir[i * 3..i * 3 + 3]);
            out.weight.push(self.weight[i]);
        }
        out
    }
}

/// Geometry of a set of rays: which samples land in which part boxes.
/// Samples outside every canonical box carry no density and are dropped.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    /// Image width the pixel indices refer to.
    pub width: usize,
    pub pixels: Vec<usize>,
    pub segments: Arc<RaySegments>,
    pub sample_ray: Vec<usize>,
    pub parts: Vec<PartPoints>,
}

impl SampleBatch {
    pub fn ray_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_ray.len()
    }

    pub fn point_count(&self) -> usize {
        self.parts.iter().map(PartPoints::len).sum()
    }
}

struct TracedSample {
    delta: f64,
    candidates: Vec<(usize, Vec3)>,
    dir: Vec3,
}

fn trace_ray(scene: &Scene, ray: &Ray, seed: u64, pixel: usize) -> Result<Vec<TracedSample>> {
    let Some((near, far)) = ray_boxes_interval(ray, &scene.posed.boxes) else {
        return Ok(Vec::new());
    };
    let n = scene.config.samples;
    let mut r = rng::stream(seed, pixel as u64);
    let ts = stratified_samples(near, far, n, &mut r)?;
    let cap = (far - near) / n as f64;
    let mut out = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        let p = ray.at(t);
        if !scene.posed.boxes.iter().any(|b| b.contains(p)) {
            continue;
        }
        let delta = ts.get(i + 1).map_or(cap, |next| next - t);
        let (x, lin) = scene.posed.to_canonical(p, scene.config.neighbors)?;
        let mut hits = Vec::new();
        for (b, bx) in scene.canonical.iter().enumerate() {
            let xh = normalize_to_box(x, bx);
            if xh.0.iter().all(|v| v.abs() <= 1.0) {
                hits.push((b, xh));
            }
        }
        if hits.is_empty() {
            continue;
        }
        let d = lin.mul_vec(ray.dir);
        let dir = if d.norm() > 1e-12 { d.normalized() } else { ray.dir };
        out.push(TracedSample {
            delta,
            candidates: hits,
            dir,
        });
    }
    Ok(out)
}

/// Traces the rays of `pixels` (row-major indices into `camera`).
/// Sample depths come from the per-pixel stream of `seed`, so the result
/// does not depend on how pixels are grouped.
pub fn sample_batch(
    scene: &Scene,
    camera: &Camera,
    pixels: &[usize],
    seed: u64,
    mix: (f64, u32),
) -> Result<SampleBatch> {
    let traced: Vec<Vec<TracedSample>> = pixels
        .iter()
        .map(|&p| {
            let ray = camera.ray(p / camera.width, p % camera.width);
            trace_ray(scene, &ray, seed, p)
        })
        .collect::<Result<_>>()?;
    let mut segments = RaySegments::new();
    let mut sample_ray = Vec::new();
    let mut parts = vec![PartPoints::default(); scene.canonical.len()];
    for (ray, samples) in traced.into_iter().enumerate() {
        for s in samples {
            let xs: Vec<Vec3> = s.candidates.iter().map(|c| c.1).collect();
            let w = mixture_weights(&xs, mix.0, mix.1)?;
            let row = sample_ray.len();
            sample_ray.push(ray);
            segments.push_sample(row, s.delta);
            for ((b, x), wi) in s.candidates.iter().zip(w) {
                parts[*b].push(row, *x, s.dir, wi);
            }
        }
        segments.finish_ray(scene.config.background);
    }
    Ok(SampleBatch {
        width: camera.width,
        pixels: pixels.to_vec(),
        segments: Arc::new(segments),
        sample_ray,
        parts,
    })
}

/// Tape nodes of a rendered batch.
#[derive(Clone, Debug)]
pub struct RenderNodes {
    /// `[rays × 3]` in batch pixel order.
    pub rgb: Var,
    /// `[rays × 3]` opacity replicated per channel.
    pub opacity: Var,
    /// Δd at every evaluated part point, `[points × 1]`, when any exist.
    pub delta: Option<Var>,
}

fn matrix_const(g: &mut Graph, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![rows, cols], data.to_vec())?))
}

/// Builds the generator forward pass for a batch on `g`.
pub fn render_nodes(gen: &Generator, g: &mut Graph, vars: &[Var], batch: &SampleBatch, words: Var) -> Result<RenderNodes> {
    let samples = batch.sample_count();
    let mut sigmas = Vec::new();
    let mut colors = Vec::new();
    let mut deltas = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (b, pts) in batch.parts.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let n = pts.len();
        let xhat = matrix_const(g, n, 3, &pts.xhat)?;
        let dir = matrix_const(g, n, 3, &pts.dir)?;
        let pass = match gen.part_pass(g, vars, b, xhat, dir, words) {
            Ok(p) => p,
            Err(Error::NonFinitePart { part, what }) => {
                let pixel = batch.pixels[batch.sample_ray[pts.sample[0]]];
                return Err(Error::NonFinitePixel {
                    row: pixel / batch.width,
                    col: pixel % batch.width,
                    what: format!("part {part}: {what}"),
                });
            }
            Err(e) => return Err(e),
        };
        sigmas.push(pass.sigma);
        colors.push(pass.color);
        deltas.push(pass.delta);
        targets.extend_from_slice(&pts.sample);
        weights.extend_from_slice(&pts.weight);
    }
    let white = g.constant(Tensor::filled(&[samples, 3], 1.0));
    let (sigma, color, delta) = if sigmas.is_empty() {
        let s = g.constant(Tensor::zeros(&[samples, 1]));
        (s, white, None)
    } else {
        let s = g.concat_rows(&sigmas)?;
        let c = g.concat_rows(&colors)?;
        let d = g.concat_rows(&deltas)?;
        let sm = g.scatter_rows(s, targets.clone(), weights.clone(), samples)?;
        let cm = g.scatter_rows(c, targets, weights, samples)?;
        (sm, cm, Some(d))
    };
    let rgb = g.volume_integrate(sigma, color, batch.segments.clone())?;
    let mut clear = (*batch.segments).clone();
    clear.background.iter_mut().for_each(|b| *b = [0.0; 3]);
    let opacity = g.volume_integrate(sigma, white, Arc::new(clear))?;
    Ok(RenderNodes { rgb, opacity, delta })
}

/// Rendered frame plus per-pixel opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: ImageBuffer,
    pub opacity: Vec<f64>,
}

/// `R = G(β, θ | 𝒯)` for every pixel of `camera`, one forward pass, no
/// parameter updates. Blocks of rays are evaluated in parallel on the
/// current rayon pool and written back by pixel index.
pub fn render_image(gen: &Generator, scene: &Scene, camera: &Camera, text: &FashionText, seed: u64) -> Result<Rendered> {
    let total = camera.pixel_count();
    let chunk = scene.config.chunk_rays;
    let blocks: Vec<Vec<usize>> = (0..total)
        .step_by(chunk)
        .map(|s| (s..(s + chunk).min(total)).collect())
        .collect();
    let mix = (gen.config.mix_m, gen.config.mix_n);
    let results: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .par_iter()
        .map(|pixels| {
            let batch = sample_batch(scene, camera, pixels, seed, mix)?;
            let mut g = Graph::new();
            let vars = gen.bind(&mut g, false);
            let words = g.constant(text.embeddings.clone());
            let out = render_nodes(gen, &mut g, &vars, &batch, words)?;
            Ok((g.data(out.rgb).to_vec(), g.data(out.opacity).to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(total * 3);
    let mut opacity = Vec::with_capacity(total);
    for (rgb, op) in results {
        data.extend_from_slice(&rgb);
        opacity.extend(op.chunks(3).map(|o| o[0]));
    }
    for (p, px) in data.chunks(3).enumerate() {
        if px.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel {
                row: p / camera.width,
                col: p % camera.width,
                what: "color".into(),
            });
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Rendered {
        image: ImageBuffer::from_data(camera.width, camera.height, data)?,
        opacity,
    })
}
