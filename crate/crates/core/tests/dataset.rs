//! Toy dataset grammar, rendering and storage.

use cch::body::BodyRig;
use cch::rays::{Camera, CameraConfig};
use cch::train::dataset::{
    generate_dataset, generate_record, load_dataset, rasterize, region, save_dataset, Garment, Grammar, Outfit, Region,
    COLORS, FABRICS, PALETTE, PATTERNS,
};

fn camera() -> Camera {
    Camera::from_config(&CameraConfig::default()).unwrap().resized(32, 64)
}

const WHITE: [f64; 3] = [1.0; 3];

#[test]
fn pure_cotton_upper_is_exact_palette() {
    let rig = BodyRig::humanoid();
    let cam = camera();
    let outfit = Outfit {
        upper: Garment {
            shape: 2,
            fabric: 1,
            pattern: 2,
            color: 0,
        },
        lower: Garment {
            shape: 2,
            fabric: 0,
            pattern: 0,
            color: 4,
        },
    };
    let grammar = Grammar::fixed(outfit);
    let rec = generate_record(&rig, &grammar, &cam, WHITE, 3, 0).unwrap();
    assert!(rec.description.starts_with("long-sleeve cotton pure color red upper"));
    let hits = rasterize(&rig, &rec.pose, &cam).unwrap();
    let mut upper = 0;
    for (p, hit) in hits.iter().enumerate() {
        let px = rec.image.pixel(p / cam.width, p % cam.width);
        match hit {
            Some((b, _, s)) if region(&outfit, *b, *s) == Region::Upper => {
                assert_eq!(px, PALETTE[0]);
                upper += 1;
            }
            None => assert_eq!(px, WHITE),
            _ => {}
        }
    }
    assert!(upper > 50, "{upper} upper pixels");
}

fn within_three_sigma(counts: &[usize], n: usize, what: &str) {
    let p = 1.0 / counts.len() as f64;
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!(
            (*c as f64 - mean).abs() <= 3.0 * sd,
            "{what}[{i}] = {c}, expected {mean:.1} ± {:.1}",
            3.0 * sd
        );
    }
}

#[test]
fn attribute_frequencies_are_uniform() {
    let rig = BodyRig::humanoid();
    let cam = Camera::from_config(&CameraConfig::default()).unwrap().resized(2, 4);
    let n = 1000;
    let recs = generate_dataset(&rig, &Grammar::default(), &cam, WHITE, n, 21).unwrap();
    for (slot, pick) in [
        ("upper", Box::new(|o: &Outfit| o.upper) as Box<dyn Fn(&Outfit) -> Garment>),
        ("lower", Box::new(|o: &Outfit| o.lower)),
    ] {
        let mut shape = [0; 3];
        let mut fabric = [0; FABRICS.len()];
        let mut pattern = [0; PATTERNS.len()];
        let mut color = [0; COLORS.len()];
        for r in &recs {
            let g = pick(&r.outfit);
            shape[g.shape] += 1;
            fabric[g.fabric] += 1;
            pattern[g.pattern] += 1;
            color[g.color] += 1;
        }
        within_three_sigma(&shape, n, &format!("{slot} shape"));
        within_three_sigma(&fabric, n, &format!("{slot} fabric"));
        within_three_sigma(&pattern, n, &format!("{slot} pattern"));
        within_three_sigma(&color, n, &format!("{slot} color"));
    }
}

#[test]
fn records_are_reproducible() {
    let rig = BodyRig::humanoid();
    let cam = camera();
    let g = Grammar::default();
    let a = generate_dataset(&rig, &g, &cam, WHITE, 4, 5).unwrap();
    let b = generate_dataset(&rig, &g, &cam, WHITE, 4, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(generate_record(&rig, &g, &cam, WHITE, 5, 2).unwrap(), a[2]);
    let c = generate_dataset(&rig, &g, &cam, WHITE, 4, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn save_and_load_round_trip() {
    let rig = BodyRig::humanoid();
    let cam = camera();
    let recs = generate_dataset(&rig, &Grammar::default(), &cam, WHITE, 3, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &recs).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        assert_eq!(a.description, b.description);
        assert_eq!(a.outfit, b.outfit);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.segmentation, b.segmentation);
        assert_eq!(a.seed, b.seed);
        let worst = a.image.data.iter().zip(&b.image.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12, "quantization error {worst}");
    }
    save_dataset(dir.path().join("again"), &back).unwrap();
    assert_eq!(load_dataset(dir.path().join("again")).unwrap(), back);
}

#[test]
fn invalid_grammar_rejected() {
    let rig = BodyRig::humanoid();
    let mut g = Grammar::default();
    g.upper.colors = vec![];
    assert!(generate_dataset(&rig, &g, &camera(), WHITE, 1, 0).is_err());
    g.upper.colors = vec![COLORS.len()];
    assert!(generate_dataset(&rig, &g, &camera(), WHITE, 1, 0).is_err());
}
