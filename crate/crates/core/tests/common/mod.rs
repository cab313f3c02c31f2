//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use factgap::embedding::{generate_clustered_space, ClusterSpec, EmbeddingSpace, Token};
use factgap::transformer::ModelParams;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(m: &ndarray::Array2<f64>) -> Mat {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn rows(space: &EmbeddingSpace) -> Mat {
    to_mat(space.embeddings())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| dot(r, v)).collect()
}

/// `W_Kᵀ W_Q` by triple loop.
fn kq(wk: &Mat, wq: &Mat) -> Mat {
    let d = wk.len();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                out[i][j] += wk[k][i] * wq[k][j];
            }
        }
    }
    out
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub struct OracleTrace {
    pub attention: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Dense forward pass written against `W_KQ` rather than separate keys and queries.
pub fn oracle_forward(params: &ModelParams, seq: &[Token]) -> OracleTrace {
    let e = rows(params.space());
    let wkq = kq(&to_mat(params.w_k()), &to_mat(params.w_q()));
    let wv = to_mat(params.w_v());
    let last = &e[seq[seq.len() - 1].0];
    let m_last = matvec(&wkq, last);
    let scores: Vec<f64> = seq.iter().map(|t| dot(&e[t.0], &m_last)).collect();
    let attention = softmax(&scores);
    let d = last.len();
    let mut c = vec![0.0; d];
    for (t, a) in seq.iter().zip(&attention) {
        for k in 0..d {
            c[k] += a * e[t.0][k];
        }
    }
    let hidden = matvec(&wv, &c);
    let logits: Vec<f64> = e.iter().map(|row| dot(row, &hidden)).collect();
    let probs = softmax(&logits);
    OracleTrace {
        attention,
        hidden,
        logits,
        probs,
    }
}

pub fn oracle_argmax(z: &[f64]) -> Token {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    Token(best)
}

pub fn oracle_loss(params: &ModelParams, seq: &[Token], answer: Token) -> f64 {
    -oracle_forward(params, seq).probs[answer.0].ln()
}

/// Pairwise-distance scan for `{t′ ≠ t : ‖E[t] − E[t′]‖ ≤ ε}`.
pub fn oracle_neighbors(space: &EmbeddingSpace, t: Token) -> BTreeSet<Token> {
    let e = rows(space);
    (0..e.len())
        .filter(|&j| {
            j != t.0 && {
                let d2: f64 = e[t.0].iter().zip(&e[j]).map(|(a, b)| (a - b).powi(2)).sum();
                d2.sqrt() <= space.epsilon()
            }
        })
        .map(Token)
        .collect()
}

pub fn plain_space(vocab: usize, dim: usize, seed: u64) -> Arc<EmbeddingSpace> {
    let spec = ClusterSpec::uniform(vocab, 0, 1, 0.0, 0.0);
    Arc::new(generate_clustered_space(&spec, dim, 0.0, seed).unwrap())
}

/// 12 tokens: two 3-member clusters, the rest isolated.
pub fn tiny_clustered_space(seed: u64) -> Arc<EmbeddingSpace> {
    let spec = ClusterSpec::uniform(12, 2, 3, 0.12, 1.0);
    Arc::new(generate_clustered_space(&spec, 6, 0.4, seed).unwrap())
}
