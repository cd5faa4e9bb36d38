//! Procedural 2-D fashion dataset rendered from the rig's capsules.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::body::{joint_transforms, BodyRig, PoseParams, ShapeParams};
use crate::error::{Error, Result};
use crate::math::{Affine, Vec3};
use crate::rays::Camera;
use crate::render::{ImageBuffer, SegmentationMap};
use crate::rng;

pub const UPPER_SHAPES: [&str; 3] = ["sleeveless", "short-sleeve", "long-sleeve"];
pub const LOWER_SHAPES: [&str; 3] = ["three-point", "medium short", "long"];
pub const FABRICS: [&str; 3] = ["denim", "cotton", "furry"];
pub const PATTERNS: [&str; 3] = ["floral", "graphic", "pure color"];
pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "black", "purple"];
pub const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.65, 0.2],
    [0.15, 0.25, 0.85],
    [0.95, 0.85, 0.2],
    [0.1, 0.1, 0.1],
    [0.55, 0.2, 0.7],
];
pub const SKIN: [f64; 3] = [0.87, 0.7, 0.58];
pub const SHOES: [f64; 3] = [0.22, 0.16, 0.12];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Garment {
    pub shape: usize,
    pub fabric: usize,
    pub pattern: usize,
    pub color: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outfit {
    pub upper: Garment,
    pub lower: Garment,
}

impl Outfit {
    pub fn description(&self) -> String {
        let u = &self.upper;
        let l = &self.lower;
        format!(
            "{} {} {} {} upper {} {} {} {} lower",
            UPPER_SHAPES[u.shape],
            FABRICS[u.fabric],
            PATTERNS[u.pattern],
            COLORS[u.color],
            LOWER_SHAPES[l.shape],
            FABRICS[l.fabric],
            PATTERNS[l.pattern],
            COLORS[l.color]
        )
    }
}

/// Allowed values for one garment slot, as indices into the tables above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotGrammar {
    pub shapes: Vec<usize>,
    pub fabrics: Vec<usize>,
    pub patterns: Vec<usize>,
    pub colors: Vec<usize>,
}

impl SlotGrammar {
    pub fn full() -> Self {
        SlotGrammar {
            shapes: (0..3).collect(),
            fabrics: (0..FABRICS.len()).collect(),
            patterns: (0..PATTERNS.len()).collect(),
            colors: (0..COLORS.len()).collect(),
        }
    }

    pub fn fixed(g: Garment) -> Self {
        SlotGrammar {
            shapes: vec![g.shape],
            fabrics: vec![g.fabric],
            patterns: vec![g.pattern],
            colors: vec![g.color],
        }
    }

    fn sample(&self, rng: &mut rng::Rng) -> Garment {
        let pick = |v: &[usize], r: &mut rng::Rng| *v.choose(r).expect("non-empty attribute list");
        Garment {
            shape: pick(&self.shapes, rng),
            fabric: pick(&self.fabrics, rng),
            pattern: pick(&self.patterns, rng),
            color: pick(&self.colors, rng),
        }
    }

    fn validate(&self, shapes: usize) -> Result<()> {
        let lists = [
            (&self.shapes, shapes),
            (&self.fabrics, FABRICS.len()),
            (&self.patterns, PATTERNS.len()),
            (&self.colors, COLORS.len()),
        ];
        for (v, n) in lists {
            if v.is_empty() || v.iter().any(|i| *i >= n) {
                return Err(Error::Config("grammar lists must be non-empty and in range".into()));
            }
        }
        Ok(())
    }
}

/// Attribute grammar over shape, fabric, pattern and color of the upper
/// and lower garments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grammar {
    pub upper: SlotGrammar,
    pub lower: SlotGrammar,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar {
            upper: SlotGrammar::full(),
            lower: SlotGrammar::full(),
        }
    }
}

impl Grammar {
    pub fn fixed(outfit: Outfit) -> Self {
        Grammar {
            upper: SlotGrammar::fixed(outfit.upper),
            lower: SlotGrammar::fixed(outfit.lower),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.upper.validate(UPPER_SHAPES.len())?;
        self.lower.validate(LOWER_SHAPES.len())
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> Outfit {
        Outfit {
            upper: self.upper.sample(rng),
            lower: self.lower.sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRecord {
    pub image: ImageBuffer,
    pub description: String,
    pub outfit: Outfit,
    pub segmentation: SegmentationMap,
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Skin,
    Shoes,
    Upper,
    Lower,
}

/// Which garment covers a point at axial fraction `s` of part `b`.
pub fn region(outfit: &Outfit, b: usize, s: f64) -> Region {
    let upper = outfit.upper.shape;
    let lower = outfit.lower.shape;
    match b {
        1 | 2 => Region::Upper,
        4 | 5 if upper == 2 || (upper == 1 && s <= 0.5) => Region::Upper,
        6 | 7 if upper == 2 => Region::Upper,
        0 => Region::Lower,
        10 | 11 if lower >= 1 || s <= 0.5 => Region::Lower,
        12 | 13 if lower == 2 => Region::Lower,
        14 | 15 => Region::Shoes,
        _ => Region::Skin,
    }
}

fn hash01(a: i64, b: i64, c: i64) -> f64 {
    let mut h = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (c as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 31;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Garment color at canonical point `x`.
pub fn garment_color(g: &Garment, x: Vec3) -> [f64; 3] {
    let base = PALETTE[g.color];
    let mut c = match g.pattern {
        // floral: light dots on a 5 cm lattice
        0 => {
            let cell = 0.05;
            let fx = (x[0] / cell).rem_euclid(1.0) - 0.5;
            let fy = (x[1] / cell).rem_euclid(1.0) - 0.5;
            if fx * fx + fy * fy < 0.06 {
                base.map(|v| 0.5 * v + 0.5)
            } else {
                base
            }
        }
        // graphic: horizontal stripes
        1 => {
            if (x[1] / 0.04).floor().rem_euclid(2.0) == 1.0 {
                base.map(|v| 0.45 * v + 0.55)
            } else {
                base
            }
        }
        _ => base,
    };
    match g.fabric {
        0 => {
            let t = ((x[0] + x[1]) / 0.012).floor().rem_euclid(2.0);
            let k = if t == 0.0 { 0.85 } else { 1.0 };
            c = c.map(|v| v * k);
        }
        2 => {
            let q = 0.008;
            let n = hash01((x[0] / q).floor() as i64, (x[1] / q).floor() as i64, (x[2] / q).floor() as i64);
            c = c.map(|v| (v + 0.16 * (n - 0.5)).clamp(0.0, 1.0));
        }
        _ => {}
    }
    c
}

/// Nearest capsule hit per pixel: part, canonical hit point, axial fraction.
pub fn rasterize(rig: &BodyRig, pose: &PoseParams, camera: &Camera) -> Result<Vec<Option<(usize, Vec3, f64)>>> {
    let h = joint_transforms(rig, pose)?;
    let posed: Vec<_> = rig
        .capsules
        .iter()
        .zip(&h.transforms)
        .map(|(c, t)| c.transformed(t))
        .collect();
    let inverse: Vec<Affine> = h.transforms.iter().map(Affine::rigid_inverse).collect();
    let mut out = Vec::with_capacity(camera.pixel_count());
    for r in 0..camera.height {
        for c in 0..camera.width {
            let ray = camera.ray(r, c);
            let hit = posed
                .iter()
                .enumerate()
                .filter_map(|(b, cap)| cap.ray_hit(ray.origin, ray.dir).map(|t| (b, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            out.push(hit.map(|(b, t)| {
                let x = inverse[b].apply(ray.at(t));
                let cap = &rig.capsules[b];
                let ab = cap.b - cap.a;
                let s = (x - cap.a).dot(ab) / ab.dot(ab);
                (b, x, s)
            }));
        }
    }
    Ok(out)
}

/// Part segmentation of the posed capsules: label `b + 1`, 0 for background.
pub fn capsule_segmentation(rig: &BodyRig, pose: &PoseParams, camera: &Camera) -> Result<SegmentationMap> {
    let hits = rasterize(rig, pose, camera)?;
    let labels = hits.iter().map(|h| h.map_or(0, |(b, _, _)| b as u8 + 1)).collect();
    SegmentationMap::new(camera.width, camera.height, labels)
}

/// Relaxed stance with small random joint perturbations.
pub fn sample_pose(rig: &BodyRig, rng: &mut rng::Rng) -> PoseParams {
    let mut pose = rig.relaxed_pose();
    let mut jitter = |k: usize, scale: [f64; 3], r: &mut rng::Rng| {
        if k < pose.theta.len() {
            let d = Vec3(scale.map(|s| r.gen_range(-s..=s)));
            pose.theta[k] += d;
        }
    };
    jitter(3, [0.1, 0.15, 0.05], rng);
    jitter(4, [0.15, 0.1, 0.15], rng);
    jitter(5, [0.15, 0.1, 0.15], rng);
    jitter(6, [0.0, 0.0, 0.2], rng);
    jitter(7, [0.0, 0.0, 0.2], rng);
    jitter(10, [0.15, 0.0, 0.05], rng);
    jitter(11, [0.15, 0.0, 0.05], rng);
    pose
}

pub fn render_record(rig: &BodyRig, outfit: &Outfit, pose: &PoseParams, camera: &Camera, background: [f64; 3]) -> Result<(ImageBuffer, SegmentationMap)> {
    let hits = rasterize(rig, pose, camera)?;
    let mut image = ImageBuffer::filled(camera.width, camera.height, background);
    let mut labels = vec![0u8; hits.len()];
    for (p, hit) in hits.iter().enumerate() {
        let Some((b, x, s)) = *hit else { continue };
        labels[p] = b as u8 + 1;
        let rgb = match region(outfit, b, s) {
            Region::Upper => garment_color(&outfit.upper, x),
            Region::Lower => garment_color(&outfit.lower, x),
            Region::Shoes => SHOES,
            Region::Skin => SKIN,
            Region::Background => background,
        };
        image.set_pixel(p / camera.width, p % camera.width, rgb);
    }
    Ok((image, SegmentationMap::new(camera.width, camera.height, labels)?))
}

/// Record `index` of the dataset drawn under `seed`; identical inputs give
/// identical records.
pub fn generate_record(rig: &BodyRig, grammar: &Grammar, camera: &Camera, background: [f64; 3], seed: u64, index: u64) -> Result<ToyRecord> {
    let mut r = rng::stream(seed, index);
    let outfit = grammar.sample(&mut r);
    let pose = sample_pose(rig, &mut r);
    let (image, segmentation) = render_record(rig, &outfit, &pose, camera, background)?;
    Ok(ToyRecord {
        image,
        description: outfit.description(),
        outfit,
        segmentation,
        pose,
        shape: ShapeParams::zeros(rig.shape_count()),
        seed: index,
    })
}

pub fn generate_dataset(rig: &BodyRig, grammar: &Grammar, camera: &Camera, background: [f64; 3], count: usize, seed: u64) -> Result<Vec<ToyRecord>> {
    grammar.validate()?;
    (0..count as u64)
        .map(|i| generate_record(rig, grammar, camera, background, seed, i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    seed: u64,
    description: String,
    outfit: Outfit,
    pose: PoseParams,
    shape: ShapeParams,
    image: String,
    segmentation: String,
}

/// Writes `manifest.json` plus one PPM image and one PGM label map per record.
pub fn save_dataset(dir: impl AsRef<std::path::Path>, records: &[ToyRecord]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let image = format!("{i:05}.ppm");
        let segmentation = format!("{i:05}_seg.pgm");
        r.image.save_ppm(dir.join(&image))?;
        std::fs::write(dir.join(&segmentation), r.segmentation.to_pgm())?;
        manifest.push(ManifestEntry {
            seed: r.seed,
            description: r.description.clone(),
            outfit: r.outfit,
            pose: r.pose.clone(),
            shape: r.shape.clone(),
            image,
            segmentation,
        });
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<std::path::Path>) -> Result<Vec<ToyRecord>> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::format(e.to_string()))?;
    manifest
        .into_iter()
        .map(|m| {
            let image = ImageBuffer::load_ppm(dir.join(&m.image))?;
            let segmentation = SegmentationMap::from_pgm(&std::fs::read(dir.join(&m.segmentation))?)?;
            if (image.width, image.height) != (segmentation.width, segmentation.height) {
                return Err(Error::format(format!("{}: image and segmentation sizes differ", m.image)));
            }
            Ok(ToyRecord {
                image,
                description: m.description,
                outfit: m.outfit,
                segmentation,
                pose: m.pose,
                shape: m.shape,
                seed: m.seed,
            })
        })
        .collect()
}
