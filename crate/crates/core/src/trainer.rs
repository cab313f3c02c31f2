//! Cross-entropy SGD with exact gradients.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Token;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeTriple, TripleSet};
use crate::rng::rng_from_seed;
use crate::transformer::{activations, log_sum_exp, predict_next, softmax, ModelParams};

/// Gradients of the loss with respect to the three attention matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_k: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl Gradients {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_k: Array2::zeros((d, d)),
            w_q: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        self.w_k += &other.w_k;
        self.w_q += &other.w_q;
        self.w_v += &other.w_v;
    }

    fn scale(&mut self, c: f64) {
        self.w_k *= c;
        self.w_q *= c;
        self.w_v *= c;
    }

    /// Largest `|a − b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_relative_error(&self, other: &Gradients, floor: f64) -> f64 {
        [
            (&self.w_k, &other.w_k),
            (&self.w_q, &other.w_q),
            (&self.w_v, &other.w_v),
        ]
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
    }
}

fn query_sequence(triple: &KnowledgeTriple, context: &[Token]) -> Vec<Token> {
    let mut seq = Vec::with_capacity(context.len() + 2);
    seq.extend_from_slice(context);
    seq.push(triple.subject);
    seq.push(triple.relation);
    seq
}

/// `−log p(a | context ++ [s, r])`.
pub fn loss(params: &ModelParams, triple: &KnowledgeTriple, context: &[Token]) -> f64 {
    let act = activations(params, &query_sequence(triple, context));
    log_sum_exp(act.logits.view()) - act.logits[triple.answer.0]
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

pub(crate) fn loss_and_gradients(
    params: &ModelParams,
    triple: &KnowledgeTriple,
    context: &[Token],
) -> (f64, Gradients) {
    let act = activations(params, &query_sequence(triple, context));
    let a = triple.answer.0;
    let loss = log_sum_exp(act.logits.view()) - act.logits[a];

    let mut dz = softmax(act.logits.view());
    dz[a] -= 1.0;
    let e = params.space().embeddings();
    let delta_h = e.t().dot(&dz);
    let g_v = outer(delta_h.view(), act.context.view());

    // Back through the attention softmax.
    let back = params.w_v().t().dot(&delta_h);
    let g: Array1<f64> = act.x.dot(&back);
    let mean = act.attention.dot(&g);
    let ds = &act.attention * &(g - mean);

    let g_k = outer(act.query.view(), act.x.t().dot(&ds).view());
    let last = act.x.row(act.x.nrows() - 1);
    let g_q = outer(act.keys.t().dot(&ds).view(), last);
    (
        loss,
        Gradients {
            w_k: g_k,
            w_q: g_q,
            w_v: g_v,
        },
    )
}

/// Exact gradients of [`loss`] through the full softmax-attention composition.
pub fn gradients(params: &ModelParams, triple: &KnowledgeTriple, context: &[Token]) -> Gradients {
    loss_and_gradients(params, triple, context).1
}

/// Central differences of [`loss`], one entry at a time.
pub fn finite_difference_gradients(
    params: &ModelParams,
    triple: &KnowledgeTriple,
    context: &[Token],
    step: f64,
) -> Gradients {
    let d = params.dim();
    let mut out = Gradients::zeros(d);
    let mut probe = params.clone();
    for which in 0..3 {
        for i in 0..d {
            for j in 0..d {
                let orig = pick(&mut probe, which)[[i, j]];
                pick(&mut probe, which)[[i, j]] = orig + step;
                let up = loss(&probe, triple, context);
                pick(&mut probe, which)[[i, j]] = orig - step;
                let down = loss(&probe, triple, context);
                pick(&mut probe, which)[[i, j]] = orig;
                let target = match which {
                    0 => &mut out.w_k,
                    1 => &mut out.w_q,
                    _ => &mut out.w_v,
                };
                target[[i, j]] = (up - down) / (2.0 * step);
            }
        }
    }
    out
}

fn pick(p: &mut ModelParams, which: usize) -> &mut Array2<f64> {
    let (k, q, v) = p.matrices_mut();
    match which {
        0 => k,
        1 => q,
        _ => v,
    }
}

fn apply(params: &mut ModelParams, g: &Gradients, lr: f64) {
    let (k, q, v) = params.matrices_mut();
    k.scaled_add(-lr, &g.w_k);
    q.scaled_add(-lr, &g.w_q);
    v.scaled_add(-lr, &g.w_v);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One update per triple, order reshuffled every epoch.
    PerExample,
    /// One update per epoch on the mean gradient.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopMode {
    /// Keep the checkpoint with the best exact-match accuracy on `eval`.
    EarlyStop { eval: TripleSet, patience: usize },
    /// Stop once the mean epoch loss drops below the threshold.
    Convergence { loss_threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch: BatchMode,
    pub stop: StopMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            batch: BatchMode::PerExample,
            stop: StopMode::Convergence {
                loss_threshold: 0.01,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        match &self.stop {
            StopMode::EarlyStop { patience, .. } if *patience == 0 => {
                Err(Error::Config("patience must be >= 1".into()))
            }
            StopMode::Convergence { loss_threshold }
                if !(loss_threshold.is_finite() && *loss_threshold > 0.0) =>
            {
                Err(Error::Config(format!(
                    "loss_threshold must be positive, got {loss_threshold}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    Convergence,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub loss_curve: Vec<f64>,
    pub eval_curve: Option<Vec<f64>>,
    pub stopped_by: StopReason,
}

impl TrainReport {
    /// CSV with columns `epoch,mean_loss,eval_acc`; `eval_acc` is empty without an eval set.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "mean_loss", "eval_acc"])?;
        for (i, l) in self.loss_curve.iter().enumerate() {
            let acc = self
                .eval_curve
                .as_ref()
                .map(|c| c[i].to_string())
                .unwrap_or_default();
            out.write_record([(i + 1).to_string(), l.to_string(), acc])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fraction of triples where the bare query `[s, r]` predicts `a`.
pub fn exact_match_accuracy(params: &ModelParams, triples: &[KnowledgeTriple]) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let hits: usize = triples
        .par_iter()
        .map(|t| usize::from(predict_next(params, &[t.subject, t.relation]) == t.answer))
        .sum();
    hits as f64 / triples.len() as f64
}

/// Fine-tunes a copy of `params` on `dataset`.
pub fn train(
    params: &ModelParams,
    dataset: &TripleSet,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let n = dataset.len();
    let lr = config.learning_rate;
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut current = params.clone();
    let mut loss_curve = Vec::new();
    let mut eval_curve = match config.stop {
        StopMode::EarlyStop { .. } => Some(Vec::new()),
        StopMode::Convergence { .. } => None,
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0usize;
    let mut stopped_by = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        match config.batch {
            BatchMode::PerExample => {
                order.shuffle(&mut rng);
                for &i in &order {
                    let (l, g) = loss_and_gradients(&current, &dataset[i], &[]);
                    if !l.is_finite() {
                        return Err(Error::Diverged { epoch });
                    }
                    total += l;
                    apply(&mut current, &g, lr);
                }
            }
            BatchMode::FullBatch => {
                let mut acc = Gradients::zeros(current.dim());
                for t in dataset.iter() {
                    let (l, g) = loss_and_gradients(&current, t, &[]);
                    if !l.is_finite() {
                        return Err(Error::Diverged { epoch });
                    }
                    total += l;
                    acc.add_assign(&g);
                }
                acc.scale(1.0 / n as f64);
                apply(&mut current, &acc, lr);
            }
        }
        if !current.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let mean = total / n as f64;
        loss_curve.push(mean);

        match &config.stop {
            StopMode::Convergence { loss_threshold } => {
                if mean < *loss_threshold {
                    stopped_by = StopReason::Convergence;
                    break;
                }
            }
            StopMode::EarlyStop { eval, patience } => {
                let acc = exact_match_accuracy(&current, eval);
                eval_curve
                    .as_mut()
                    .expect("early stop tracks eval")
                    .push(acc);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, current.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= *patience {
                        stopped_by = StopReason::EarlyStop;
                        break;
                    }
                }
            }
        }
    }

    let report = TrainReport {
        epochs_run: loss_curve.len(),
        loss_curve,
        eval_curve,
        stopped_by,
    };
    let out = best.map(|(_, p)| p).unwrap_or(current);
    Ok((out, report))
}
