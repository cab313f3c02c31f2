//! Test sets at a controlled cosine distance from the training distribution.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::embedding::{cosine_of, random_unit_orthogonal, EmbeddingSpace, Token};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeTriple, TripleSet};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct OodTestSet {
    /// The input space extended with one fresh token per shifted subject.
    pub space: Arc<EmbeddingSpace>,
    pub test: TripleSet,
    pub new_tokens: Vec<Token>,
    pub target_gamma: f64,
    /// Mean cosine between each test subject and the training subjects of its anchor's component.
    pub achieved_gamma: f64,
}

fn orthonormal_basis(space: &EmbeddingSpace, tokens: &BTreeSet<Token>) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for &t in tokens {
        let mut v = space.embedding(t).to_owned();
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            basis.push(v / n);
        }
    }
    basis
}

/// Replaces each anchor's subject by `v = γ·E[s] + √(1−γ²)·w`, with `w` a
/// seeded unit vector orthogonal to the span of the anchor's similarity
/// component. Answers are kept. `w` depends only on the seed and the anchor
/// position, so tiers built with one seed are nested.
///
/// `γ = 1` returns the anchors unchanged over the original space.
pub fn make_ood_testset(
    space: &Arc<EmbeddingSpace>,
    train: &[KnowledgeTriple],
    anchors: &[KnowledgeTriple],
    gamma: f64,
    seed: u64,
) -> Result<OodTestSet> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma {gamma} outside [0, 1]")));
    }
    let components: Vec<BTreeSet<Token>> = anchors
        .iter()
        .map(|t| space.closure(t.subject, usize::MAX))
        .collect();

    let (out_space, test, new_tokens) = if gamma == 1.0 {
        (space.clone(), anchors.iter().copied().collect(), Vec::new())
    } else {
        let mut rng = rng_from_seed(seed);
        let shift = (1.0 - gamma * gamma).sqrt();
        let mut rows = Array2::zeros((anchors.len(), space.dim()));
        for (i, t) in anchors.iter().enumerate() {
            let basis = orthonormal_basis(space, &components[i]);
            let w = random_unit_orthogonal(&mut rng, space.dim(), &basis);
            let v = &space.embedding(t.subject) * gamma + &w * shift;
            let n = v.dot(&v).sqrt();
            rows.row_mut(i).assign(&(v / n));
        }
        let extended = Arc::new(space.extend(&rows)?);
        let base = space.vocab_size();
        let new_tokens: Vec<Token> = (0..anchors.len()).map(|i| Token(base + i)).collect();
        let test = anchors
            .iter()
            .zip(&new_tokens)
            .map(|(t, &s)| KnowledgeTriple::new(s, t.relation, t.answer))
            .collect::<Result<TripleSet>>()?;
        (extended, test, new_tokens)
    };

    let train_subjects: Vec<Token> = train.iter().map(|t| t.subject).collect();
    let mut total = 0.0;
    for (i, t) in test.iter().enumerate() {
        let mates: Vec<Token> = train_subjects
            .iter()
            .copied()
            .filter(|s| components[i].contains(s))
            .collect();
        let sims: Vec<f64> = if mates.is_empty() {
            train_subjects.clone()
        } else {
            mates
        }
        .iter()
        .filter_map(|&s| cosine_of(out_space.embedding(t.subject), space.embedding(s)))
        .collect();
        total += if sims.is_empty() {
            0.0
        } else {
            sims.iter().sum::<f64>() / sims.len() as f64
        };
    }
    let achieved_gamma = if test.is_empty() {
        gamma
    } else {
        total / test.len() as f64
    };
    Ok(OodTestSet {
        space: out_space,
        test,
        new_tokens,
        target_gamma: gamma,
        achieved_gamma,
    })
}
