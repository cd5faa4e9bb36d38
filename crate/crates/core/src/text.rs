//! Fashion vocabulary, tokenization and cross-modal attention.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 32;
pub const DEFAULT_WORD_DIM: usize = 64;

/// Tokens of the toy fashion grammar plus a few filler words.
pub const FASHION_WORDS: &[&str] = &[
    "sleeveless", "short-sleeve", "long-sleeve", "three-point", "medium", "short", "long",
    "denim", "cotton", "furry", "floral", "graphic", "pure", "color", "red", "green", "blue",
    "yellow", "black", "purple", "upper", "lower", "clothing", "a", "the", "with", "and",
    "wearing", "shirt", "pants",
];

/// Closed token set; ids are dense and `0` is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// `tokens` must start with the padding and unknown markers.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::invalid(format!(
                "vocabulary must begin with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad token {t:?} on line {}", i + 1)));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn fashion() -> Self {
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .iter()
            .chain(FASHION_WORDS)
            .map(|t| t.to_string())
            .collect();
        Vocabulary::new(tokens).expect("built-in vocabulary is valid")
    }

    /// One token per line; the line index is the id.
    pub fn parse(text: &str) -> Result<Self> {
        Vocabulary::new(text.lines().map(|l| l.trim().to_string()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Vocabulary::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Lowercased whitespace tokens, truncated to `max_len`.
    pub fn tokenize(&self, description: &str, max_len: usize) -> Result<Vec<usize>> {
        let ids: Vec<usize> = description
            .split_whitespace()
            .take(max_len)
            .map(|w| self.id(&w.to_lowercase()))
            .collect();
        if ids.is_empty() {
            return Err(Error::invalid("description has no tokens"));
        }
        Ok(ids)
    }
}

/// Token ids together with their embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FashionText {
    pub ids: Vec<usize>,
    /// `L × d_w`.
    pub embeddings: Tensor,
}

impl FashionText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Random embedding table `[|V| × d_w]` with a zero padding row.
pub fn init_embeddings(vocab_len: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut data: Vec<f64> = (0..vocab_len * dim)
        .map(|_| rng.gen_range(-1.0..1.0) * scale * 3f64.sqrt())
        .collect();
    data[..dim].fill(0.0);
    Tensor::new(vec![vocab_len, dim], data).expect("table shape")
}

pub fn lookup(ids: &[usize], table: &Tensor) -> Result<Tensor> {
    let (v, d) = table.dims2();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::invalid(format!("token id {id} outside table of {v}")));
        }
        out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::new(vec![ids.len(), d], out)
}

pub fn encode(description: &str, vocab: &Vocabulary, table: &Tensor, max_len: usize) -> Result<FashionText> {
    if table.dims2().0 != vocab.len() {
        return Err(Error::shape("embedding table rows must match the vocabulary"));
    }
    let ids = vocab.tokenize(description, max_len)?;
    let embeddings = lookup(&ids, table)?;
    Ok(FashionText { ids, embeddings })
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// `p = softmax(f W wᵀ)`, context `Σ p_l w_l`; `f` has length F, `w` is
/// `F × d_w` and `words` is `L × d_w`.
pub fn cross_attention(f: &[f64], words: &Tensor, w: &Tensor) -> Result<Attention> {
    let (l, dw) = words.dims2();
    if l == 0 {
        return Err(Error::invalid("cross attention over zero words"));
    }
    let (fr, wc) = w.dims2();
    if fr != f.len() || wc != dw {
        return Err(Error::shape(format!(
            "cross attention: f has {} entries, W is {fr}x{wc}, words are {l}x{dw}",
            f.len()
        )));
    }
    let mut key = vec![0.0; dw];
    for (i, fi) in f.iter().enumerate() {
        for (k, kv) in key.iter_mut().enumerate() {
            *kv += fi * w.data()[i * dw + k];
        }
    }
    let rows: Vec<&[f64]> = words.data().chunks(dw).collect();
    let logits: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&key).map(|(a, b)| a * b).sum())
        .collect();
    let weights = softmax(&logits);
    let mut context = vec![0.0; dw];
    for (p, r) in weights.iter().zip(&rows) {
        for (c, v) in context.iter_mut().zip(r.iter()) {
            *c += p * v;
        }
    }
    Ok(Attention { weights, context })
}
