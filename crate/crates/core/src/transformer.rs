//! One-layer, one-head attention with a tied un-embedding.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{parse_field, read_matrix_rows, write_matrix_rows, EmbeddingSpace, Token};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Attention parameters bound to an embedding space.
///
/// `U = Eᵀ` is never stored; logits are always `E h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    space: Arc<EmbeddingSpace>,
    w_k: Array2<f64>,
    w_q: Array2<f64>,
    w_v: Array2<f64>,
}

/// Initialisation of the pre-fine-tuning model.
///
/// `W_K = κI`, `W_Q = −κI` makes a token attend away from itself, so the
/// query `[s, r]` looks at `s`; `W_V = βI` then echoes the subject back.
/// Small Gaussian noise breaks exact symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseInit {
    pub attention_sharpness: f64,
    pub value_gain: f64,
    pub noise: f64,
}

impl Default for BaseInit {
    fn default() -> Self {
        Self {
            attention_sharpness: 4.0,
            value_gain: 15.0,
            noise: 0.05,
        }
    }
}

impl ModelParams {
    pub fn new(
        space: Arc<EmbeddingSpace>,
        w_k: Array2<f64>,
        w_q: Array2<f64>,
        w_v: Array2<f64>,
    ) -> Result<Self> {
        let d = space.dim();
        for (name, m) in [("WK", &w_k), ("WQ", &w_q), ("WV", &w_v)] {
            if m.dim() != (d, d) {
                return Err(Error::Contract(format!(
                    "{name} has shape {:?}, expected ({d}, {d})",
                    m.dim()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self {
            space,
            w_k,
            w_q,
            w_v,
        })
    }

    pub fn zeros(space: Arc<EmbeddingSpace>) -> Self {
        let d = space.dim();
        Self {
            space,
            w_k: Array2::zeros((d, d)),
            w_q: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
        }
    }

    /// Independent `N(0, scale²)` entries.
    pub fn random(space: Arc<EmbeddingSpace>, scale: f64, seed: u64) -> Self {
        let d = space.dim();
        let mut rng = rng_from_seed(seed);
        let mut draw = || {
            Array2::from_shape_simple_fn((d, d), || scale * rng.sample::<f64, _>(StandardNormal))
        };
        let (w_k, w_q, w_v) = (draw(), draw(), draw());
        Self {
            space,
            w_k,
            w_q,
            w_v,
        }
    }

    pub fn base(space: Arc<EmbeddingSpace>, init: &BaseInit, seed: u64) -> Self {
        let d = space.dim();
        let noise = Self::random(space.clone(), init.noise, seed);
        let eye = Array2::<f64>::eye(d);
        Self {
            space,
            w_k: &eye * init.attention_sharpness + &noise.w_k,
            w_q: &eye * -init.attention_sharpness + &noise.w_q,
            w_v: &eye * init.value_gain + &noise.w_v,
        }
    }

    pub fn space(&self) -> &Arc<EmbeddingSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn w_k(&self) -> &Array2<f64> {
        &self.w_k
    }

    pub fn w_q(&self) -> &Array2<f64> {
        &self.w_q
    }

    pub fn w_v(&self) -> &Array2<f64> {
        &self.w_v
    }

    /// `W_KQ = W_Kᵀ W_Q`.
    pub fn w_kq(&self) -> Array2<f64> {
        self.w_k.t().dot(&self.w_q)
    }

    /// Same weights over a different space of equal dimension (e.g. an extended vocabulary).
    pub fn rebind(&self, space: Arc<EmbeddingSpace>) -> Result<Self> {
        if space.dim() != self.dim() {
            return Err(Error::Contract(format!(
                "cannot rebind dim {} params to dim {} space",
                self.dim(),
                space.dim()
            )));
        }
        Ok(Self {
            space,
            w_k: self.w_k.clone(),
            w_q: self.w_q.clone(),
            w_v: self.w_v.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_k, &self.w_q, &self.w_v]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn matrices_mut(
        &mut self,
    ) -> (&mut Array2<f64>, &mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.w_k, &mut self.w_q, &mut self.w_v)
    }

    /// Checkpoint text: three blocks headed `WK d d`, `WQ d d`, `WV d d`.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for (name, m) in [("WK", &self.w_k), ("WQ", &self.w_q), ("WV", &self.w_v)] {
            out.push_str(&format!("{name} {d} {d}\n"));
            write_matrix_rows(&mut out, m);
        }
        out
    }

    pub fn from_text(text: &str, space: Arc<EmbeddingSpace>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut mats = Vec::with_capacity(3);
        for name in ["WK", "WQ", "WV"] {
            let (idx, header) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {name} block")))?;
            let f: Vec<&str> = header.split_whitespace().collect();
            if f.len() != 3 || f[0] != name {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected `{name} d d` header"),
                ));
            }
            let r: usize = parse_field(f[1], idx + 1)?;
            let c: usize = parse_field(f[2], idx + 1)?;
            mats.push(read_matrix_rows(&mut lines, r, c)?);
        }
        let w_v = mats.pop().expect("three blocks");
        let w_q = mats.pop().expect("three blocks");
        let w_k = mats.pop().expect("three blocks");
        Self::new(space, w_k, w_q, w_v)
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub attention: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

pub(crate) fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

pub(crate) fn log_sum_exp(z: ArrayView1<f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.mapv(|x| (x - m).exp()).sum().ln()
}

/// Everything computed on the way to the logits; shared with the backward pass.
pub(crate) struct Activations {
    /// n×d token embeddings.
    pub x: Array2<f64>,
    /// n×d keys, row t = W_K e_t.
    pub keys: Array2<f64>,
    pub query: Array1<f64>,
    pub attention: Array1<f64>,
    /// Attention-weighted embedding Σ α_t e_t.
    pub context: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
}

pub(crate) fn activations(params: &ModelParams, sequence: &[Token]) -> Activations {
    assert!(!sequence.is_empty(), "sequence must be non-empty");
    let e = params.space.embeddings();
    let ids: Vec<usize> = sequence.iter().map(|t| t.0).collect();
    let x = e.select(Axis(0), &ids);
    let last = x.row(x.nrows() - 1);
    let query = params.w_q.dot(&last);
    let keys = x.dot(&params.w_k.t());
    let attention = softmax(keys.dot(&query).view());
    let context = attention.dot(&x);
    let hidden = params.w_v.dot(&context);
    let logits = e.dot(&hidden);
    Activations {
        x,
        keys,
        query,
        attention,
        context,
        hidden,
        logits,
    }
}

/// Attention over the sequence with the last token as query.
///
/// # Panics
/// If `sequence` is empty or contains a token outside the vocabulary.
pub fn attention_weights(params: &ModelParams, sequence: &[Token]) -> Array1<f64> {
    activations(params, sequence).attention
}

/// # Panics
/// If `sequence` is empty or contains a token outside the vocabulary.
pub fn forward(params: &ModelParams, sequence: &[Token]) -> ForwardTrace {
    let a = activations(params, sequence);
    let probs = softmax(a.logits.view());
    ForwardTrace {
        attention: a.attention,
        hidden: a.hidden,
        logits: a.logits,
        probs,
    }
}

/// Greedy next token; ties go to the lowest id.
///
/// # Panics
/// If `sequence` is empty or contains a token outside the vocabulary.
pub fn predict_next(params: &ModelParams, sequence: &[Token]) -> Token {
    argmax(activations(params, sequence).logits.view())
}

pub(crate) fn argmax(z: ArrayView1<f64>) -> Token {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    Token(best)
}
