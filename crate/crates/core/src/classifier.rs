//! Known/Unknown labels by context probing.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Token;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeTriple, TripleSet};
use crate::rng::{derive_seed, rng_from_seed};
use crate::transformer::{predict_next, ModelParams};

/// Limit on the number of contexts [`classify_exhaustive`] will enumerate.
pub const MAX_EXHAUSTIVE_CONTEXTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub num_probes: usize,
    pub context_length: usize,
    /// Tokens contexts are drawn from; `None` means the whole vocabulary.
    /// `s`, `r` and `a` are always removed.
    pub context_pool: Option<BTreeSet<Token>>,
    pub seed: u64,
    pub include_empty_context: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_probes: 10,
            context_length: 4,
            context_pool: None,
            seed: 0,
            include_empty_context: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_probes == 0 {
            return Err(Error::Config("num_probes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Known,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeLabel {
    pub label: Label,
    /// Context (without the trailing `s, r`) that produced the answer.
    pub witness: Option<Vec<Token>>,
}

impl KnowledgeLabel {
    fn known(witness: Vec<Token>) -> Self {
        Self {
            label: Label::Known,
            witness: Some(witness),
        }
    }

    fn unknown() -> Self {
        Self {
            label: Label::Unknown,
            witness: None,
        }
    }

    pub fn is_known(&self) -> bool {
        self.label == Label::Known
    }
}

fn probe_pool(triple: &KnowledgeTriple, config: &ProbeConfig, vocab: usize) -> Result<Vec<Token>> {
    let excluded = [triple.subject, triple.relation, triple.answer];
    let pool: Vec<Token> = match &config.context_pool {
        Some(p) => p
            .iter()
            .copied()
            .filter(|t| !excluded.contains(t))
            .collect(),
        None => (0..vocab)
            .map(Token)
            .filter(|t| !excluded.contains(t))
            .collect(),
    };
    if pool.len() < config.context_length {
        return Err(Error::Config(format!(
            "context pool has {} tokens, fewer than context_length {}",
            pool.len(),
            config.context_length
        )));
    }
    if let Some(t) = pool.iter().find(|t| t.0 >= vocab) {
        return Err(Error::Config(format!(
            "context pool token {t} outside vocabulary"
        )));
    }
    Ok(pool)
}

/// The probe contexts in probe order: the empty context first when enabled,
/// then `num_probes` samples drawn with replacement.
///
/// The stream depends only on the seed and the triple, so a larger
/// `num_probes` extends a smaller one.
pub fn sample_contexts(
    triple: &KnowledgeTriple,
    config: &ProbeConfig,
    vocab_size: usize,
) -> Result<Vec<Vec<Token>>> {
    config.validate()?;
    let pool = probe_pool(triple, config, vocab_size)?;
    let key = derive_seed(
        derive_seed(config.seed, triple.subject.0 as u64),
        ((triple.relation.0 as u64) << 32) ^ triple.answer.0 as u64,
    );
    let mut rng = rng_from_seed(key);
    let mut out = Vec::with_capacity(config.num_probes + 1);
    if config.include_empty_context {
        out.push(Vec::new());
    }
    for _ in 0..config.num_probes {
        let ctx = (0..config.context_length)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        out.push(ctx);
    }
    Ok(out)
}

fn first_success(
    params: &ModelParams,
    triple: &KnowledgeTriple,
    contexts: impl IntoIterator<Item = Vec<Token>>,
) -> KnowledgeLabel {
    for mut ctx in contexts {
        let n = ctx.len();
        ctx.push(triple.subject);
        ctx.push(triple.relation);
        if predict_next(params, &ctx) == triple.answer {
            ctx.truncate(n);
            return KnowledgeLabel::known(ctx);
        }
    }
    KnowledgeLabel::unknown()
}

/// Known iff some probe context makes the model answer `a`; the witness is the
/// first such context.
pub fn classify_triple(
    params: &ModelParams,
    triple: &KnowledgeTriple,
    config: &ProbeConfig,
) -> Result<KnowledgeLabel> {
    let contexts = sample_contexts(triple, config, params.space().vocab_size())?;
    Ok(first_success(params, triple, contexts))
}

/// Every context of exactly `context_length` tokens from the pool (repeats
/// allowed), in lexicographic order, after the empty context if enabled.
pub fn classify_exhaustive(
    params: &ModelParams,
    triple: &KnowledgeTriple,
    config: &ProbeConfig,
) -> Result<KnowledgeLabel> {
    let pool = probe_pool(triple, config, params.space().vocab_size())?;
    let m = config.context_length;
    let total = pool
        .len()
        .checked_pow(m as u32)
        .filter(|&n| n <= MAX_EXHAUSTIVE_CONTEXTS)
        .ok_or_else(|| {
            Error::Config(format!(
                "{}^{m} contexts exceeds the exhaustive limit {MAX_EXHAUSTIVE_CONTEXTS}",
                pool.len()
            ))
        })?;
    let empty = config.include_empty_context.then(Vec::new);
    let all = (0..total).map(|mut code| {
        let mut ctx = vec![Token(0); m];
        for slot in ctx.iter_mut().rev() {
            *slot = pool[code % pool.len()];
            code /= pool.len();
        }
        ctx
    });
    Ok(first_success(params, triple, empty.into_iter().chain(all)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub known: TripleSet,
    pub unknown: TripleSet,
    /// Per-triple labels in dataset order.
    pub labels: Vec<KnowledgeLabel>,
    pub balanced_known: TripleSet,
    pub balanced_unknown: TripleSet,
    /// Set when balancing leaves a split empty.
    pub warning: Option<String>,
}

/// Labels every triple, then truncates both splits per relation to the
/// smaller size by seeded random selection.
pub fn partition_dataset(
    params: &ModelParams,
    dataset: &TripleSet,
    config: &ProbeConfig,
) -> Result<Partition> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot partition an empty dataset".into()));
    }
    let labels = dataset
        .par_iter()
        .map(|t| classify_triple(params, t, config))
        .collect::<Result<Vec<_>>>()?;
    let mut known = TripleSet::new();
    let mut unknown = TripleSet::new();
    for (t, l) in dataset.iter().zip(&labels) {
        if l.is_known() {
            known.push(*t);
        } else {
            unknown.push(*t);
        }
    }

    let mut balanced_known = TripleSet::new();
    let mut balanced_unknown = TripleSet::new();
    for r in dataset.relations() {
        let k = known.with_relation(r);
        let u = unknown.with_relation(r);
        let n = k.len().min(u.len());
        let mut rng = rng_from_seed(derive_seed(config.seed, r.0 as u64));
        for (src, dst) in [(&k, &mut balanced_known), (&u, &mut balanced_unknown)] {
            let mut idx: Vec<usize> = (0..src.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
            for i in idx {
                dst.push(src[i]);
            }
        }
    }
    let warning = (balanced_known.is_empty() || balanced_unknown.is_empty()).then(|| {
        format!(
            "balanced split is empty ({} known, {} unknown before balancing)",
            known.len(),
            unknown.len()
        )
    });
    Ok(Partition {
        known,
        unknown,
        labels,
        balanced_known,
        balanced_unknown,
        warning,
    })
}

/// CSV manifest `s,r,a,label,witness_tokens`; witness tokens are space-separated ids.
pub fn write_manifest<W: Write>(
    w: W,
    triples: &[KnowledgeTriple],
    labels: &[KnowledgeLabel],
) -> Result<()> {
    if triples.len() != labels.len() {
        return Err(Error::Contract("one label per triple required".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s", "r", "a", "label", "witness_tokens"])?;
    for (t, l) in triples.iter().zip(labels) {
        let label = match l.label {
            Label::Known => "known",
            Label::Unknown => "unknown",
        };
        let witness = l
            .witness
            .as_ref()
            .map(|w| {
                w.iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        out.write_record([
            t.subject.to_string(),
            t.relation.to_string(),
            t.answer.to_string(),
            label.to_string(),
            witness,
        ])?;
    }
    out.flush()?;
    Ok(())
}
