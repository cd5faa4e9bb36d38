//! Fashion map, discriminator scale and the R1 term.

mod common;

use cch::autodiff::{Graph, Tensor};
use cch::disc::{loss_d_node, DiscConfig, Discriminator, SEG_CLASSES};
use cch::render::SegmentationMap;
use cch::rng::{seeded, Rng};
use cch::text::Vocabulary;
use cch::train::{dataset_for, rig_for, vocab_for, Trainer};
use rand::Rng as _;

fn small(slope: f64) -> Discriminator {
    let config = DiscConfig {
        widths: [4, 8, 8, 8],
        seg_dim: 6,
        word_dim: 5,
        slope,
        ..Default::default()
    };
    Discriminator::new(config, Vocabulary::fashion().len(), &mut seeded(8)).unwrap()
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_seg(h: usize, w: usize, rng: &mut Rng) -> Tensor {
    let labels = (0..h * w).map(|_| rng.gen_range(0..SEG_CLASSES as u8)).collect();
    SegmentationMap::new(w, h, labels).unwrap().one_hot(SEG_CLASSES)
}

/// `Q` as `[pixels × d_w]` rows for the given words.
fn q_rows(d: &Discriminator, seg: &Tensor, words: &Tensor) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let vars = d.bind(&mut g, false);
    let s = g.constant(seg.clone());
    let w = g.constant(words.clone());
    let fm = d.fashion_map(&mut g, &vars, s, w).unwrap();
    let q = g.value(fm.q);
    let (dw, n) = (q.shape()[0], q.shape()[1] * q.shape()[2]);
    (0..n).map(|p| (0..dw).map(|c| q.data()[c * n + p]).collect()).collect()
}

#[test]
fn single_word_fills_the_fashion_map() {
    let d = small(0.2);
    let mut rng = seeded(1);
    let seg = random_seg(16, 16, &mut rng);
    let word = Tensor::matrix(1, 5, vec![0.3, -0.1, 0.8, 0.0, -2.0]).unwrap();
    for row in q_rows(&d, &seg, &word) {
        assert_eq!(row, word.data());
    }
}

#[test]
fn zero_attention_weights_average_the_words() {
    let mut d = small(0.2);
    let a = d.attn_index();
    d.params.get_mut(a).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut rng = seeded(2);
    let seg = random_seg(16, 16, &mut rng);
    let words = Tensor::matrix(3, 5, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mean: Vec<f64> = (0..5).map(|c| (0..3).map(|l| words.data()[l * 5 + c]).sum::<f64>() / 3.0).collect();
    for row in q_rows(&d, &seg, &words) {
        for (a, b) in row.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn fresh_logits_are_finite_bounded_and_repeatable() {
    let d = small(0.2);
    let mut rng = seeded(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let img = random(&[3, 16, 16], &mut rng);
        let seg = random_seg(16, 16, &mut rng);
        let ids: Vec<usize> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..20)).collect();
        let a = d.score(&img, &seg, &ids).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, d.score(&img, &seg, &ids).unwrap());
        worst = worst.max(a.abs());
    }
    assert!(worst <= 10.0, "largest logit {worst}");
}

#[test]
fn r1_of_a_linear_discriminator() {
    // Unit slope makes the logit affine in the image.
    let d = small(1.0);
    let mut rng = seeded(4);
    let img = random(&[3, 16, 16], &mut rng);
    let seg = random_seg(16, 16, &mut rng);
    let ids = [3, 7, 9];

    let base = d.score(&img, &seg, &ids).unwrap();
    let mut n2 = 0.0;
    for i in 0..img.len() {
        let mut p = img.clone();
        p.data_mut()[i] += 1.0;
        let gi = d.score(&p, &seg, &ids).unwrap() - base;
        n2 += gi * gi;
    }

    let mut g = Graph::new();
    let vars = d.bind(&mut g, false);
    let words = d.words(&mut g, &vars, &ids).unwrap();
    let s = g.constant(seg);
    let fm = d.fashion_map(&mut g, &vars, s, words).unwrap();
    let x = g.constant(img);
    let pass = d.logit(&mut g, &vars, x, fm.q).unwrap();
    let r1 = d.r1_node(&mut g, &vars, &pass, x, fm.q).unwrap();
    let fake = g.constant(Tensor::scalar(0.0).reshaped(&[1]).unwrap());
    let with = loss_d_node(&mut g, pass.logit, fake, Some(r1), 10.0).unwrap();
    let without = loss_d_node(&mut g, pass.logit, fake, None, 10.0).unwrap();
    let term = g.value(with).item() - g.value(without).item();
    assert!((term - 10.0 * n2).abs() <= 1e-9 * (10.0 * n2), "{term} vs {}", 10.0 * n2);
}

#[test]
fn upper_and_lower_regions_attend_differently_after_training() {
    let config = common::tiny_config();
    let rig = rig_for(&config).unwrap();
    let records = dataset_for(&config, &rig).unwrap();
    let vocab = vocab_for(&config).unwrap();
    let mut t = Trainer::new(config.clone(), rig, vocab.clone(), records).unwrap();
    let epoch = config.dataset.count.div_ceil(config.batch);
    for _ in 0..epoch {
        t.step().unwrap();
    }

    // Torso on the top half, left thigh on the bottom half.
    let (h, w) = (16, 16);
    let labels = (0..h * w).map(|p| if p < h * w / 2 { 2 } else { 11 }).collect();
    let seg = SegmentationMap::new(w, h, labels).unwrap().one_hot(SEG_CLASSES);
    let ids = vocab.tokenize("denim upper floral lower", config.max_len).unwrap();

    let mut g = Graph::new();
    let vars = t.disc.bind(&mut g, false);
    let words = t.disc.words(&mut g, &vars, &ids).unwrap();
    let s = g.constant(seg);
    let fm = t.disc.fashion_map(&mut g, &vars, s, words).unwrap();
    let att = g.value(fm.attention);
    let l = ids.len();
    let (fh, fw) = (h / 4, w / 4);
    let row = |r: usize, c: usize| &att.data()[(r * fw + c) * l..(r * fw + c + 1) * l];
    let upper = row(0, fw / 2);
    let lower = row(fh - 1, fw / 2);
    let gap = upper.iter().zip(lower).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "attention rows differ by only {gap:.3e}");
}
