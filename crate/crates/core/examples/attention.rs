//! Tokenizes a description and shows which words a random point feature
//! attends to, plus the multi-part mixture weights at a shared point.

use cch::autodiff::Tensor;
use cch::fields::mixture_weights;
use cch::math::Vec3;
use cch::rng;
use cch::text::{cross_attention, encode, init_embeddings, Vocabulary};
use rand::Rng;

fn main() -> cch::Result<()> {
    let vocab = Vocabulary::fashion();
    let mut r = rng::seeded(3);
    let table = init_embeddings(vocab.len(), 8, &mut r);
    let text = encode("short-sleeve furry floral yellow upper three-point denim graphic blue lower", &vocab, &table, 32)?;
    let f: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let w = Tensor::matrix(6, 8, (0..48).map(|_| r.gen_range(-2.0..2.0)).collect())?;
    let a = cross_attention(&f, &text.embeddings, &w)?;
    for (id, p) in text.ids.iter().zip(&a.weights) {
        println!("{:<14} {p:.4}", vocab.token(*id).unwrap_or("?"));
    }
    println!("sum of weights {:.15}", a.weights.iter().sum::<f64>());

    let shared = [Vec3::new(0.9, 0.1, 0.0), Vec3::new(-0.2, -0.95, 0.3)];
    let m = mixture_weights(&shared, 2.0, 8)?;
    println!("mixture weights of a point inside two boxes: {m:.4?}");
    Ok(())
}
