//! Synthetic known/unknown fact datasets over a clustered space.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_triple, KnowledgeLabel, ProbeConfig};
use crate::embedding::{random_unit_orthogonal, EmbeddingSpace, Token};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeTriple, TripleSet};
use crate::harness::config::DatasetConfig;
use crate::rng::rng_from_seed;
use crate::transformer::ModelParams;

const PERTURB_COSINE: f64 = 0.5;
const MAX_PERTURB_TRIES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Subject and answer inside size-≥5 clusters.
    ClusterKnown,
    /// Subject and answer are isolated tokens.
    IsolatedUnknown,
    /// Copy of a known triple whose subject was moved to a fresh isolated token.
    PerturbedUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Known,
    Unknown,
    Test,
    Perturbed,
}

/// Generated facts with their roles in the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub space: Arc<EmbeddingSpace>,
    pub relation: Token,
    /// Extra relation used for intermediate reasoning-chain steps.
    pub aux_relation: Token,
    /// Node set of every extracted graph: all tokens except relations and fillers.
    pub entities: BTreeSet<Token>,
    /// Isolated tokens with no role; only ever seen in probe contexts.
    pub fillers: Vec<Token>,
    /// Clusters used as subject domains, in generation order.
    pub subject_clusters: Vec<Vec<Token>>,
    pub known: TripleSet,
    pub unknown: TripleSet,
    /// Held-out facts from the known clusters.
    pub test: TripleSet,
    pub perturbed: TripleSet,
    /// Classifier labels for `known ++ unknown ++ perturbed` on some reference model.
    pub labels: Option<Vec<KnowledgeLabel>>,
}

impl DatasetSpec {
    pub fn is_empty(&self) -> bool {
        self.known.is_empty() && self.unknown.is_empty() && self.test.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&KnowledgeTriple, Split, Provenance)> {
        tag(&self.known, Split::Known, Provenance::ClusterKnown)
            .chain(tag(
                &self.unknown,
                Split::Unknown,
                Provenance::IsolatedUnknown,
            ))
            .chain(tag(&self.test, Split::Test, Provenance::ClusterKnown))
            .chain(tag(
                &self.perturbed,
                Split::Perturbed,
                Provenance::PerturbedUnknown,
            ))
    }

    /// Training facts the labels refer to.
    pub fn labeled_triples(&self) -> Vec<KnowledgeTriple> {
        self.known
            .iter()
            .chain(self.unknown.iter())
            .chain(self.perturbed.iter())
            .copied()
            .collect()
    }

    /// Labels every training fact with the classifier on `params`.
    pub fn label_with(&mut self, params: &ModelParams, probe: &ProbeConfig) -> Result<()> {
        let labels = self
            .labeled_triples()
            .iter()
            .map(|t| classify_triple(params, t, probe))
            .collect::<Result<Vec<_>>>()?;
        self.labels = Some(labels);
        Ok(())
    }

    /// CSV `s,r,a,split,provenance,label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s", "r", "a", "split", "provenance", "label"])?;
        let mut labeled_idx = 0;
        for (t, split, prov) in self.entries() {
            let label = if split == Split::Test {
                String::new()
            } else {
                labeled_idx += 1;
                self.labels
                    .as_ref()
                    .map(|l| format!("{:?}", l[labeled_idx - 1].label).to_lowercase())
                    .unwrap_or_default()
            };
            out.write_record([
                t.subject.to_string(),
                t.relation.to_string(),
                t.answer.to_string(),
                serde_json::to_value(split)?
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                serde_json::to_value(prov)?
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                label,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn tag(
    set: &TripleSet,
    split: Split,
    prov: Provenance,
) -> impl Iterator<Item = (&KnowledgeTriple, Split, Provenance)> {
    set.iter().map(move |t| (t, split, prov))
}

/// Builds the known split from size-≥`min_cluster_size` clusters (every member
/// of subject cluster `k` shares one answer from an answer cluster), the
/// unknown split from isolated tokens, and an in-cluster test split.
///
/// The two highest-id isolated tokens are reserved as relations.
pub fn generate_dataset(
    space: &Arc<EmbeddingSpace>,
    config: &DatasetConfig,
    seed: u64,
) -> Result<DatasetSpec> {
    let exhausted = |what: String| Error::Config(format!("inventory exhausted: {what}"));
    let mut rng = rng_from_seed(seed);
    let comps = space.components();
    let mut clusters: Vec<Vec<Token>> = comps
        .iter()
        .filter(|c| c.len() >= config.min_cluster_size.max(2))
        .cloned()
        .collect();
    let mut isolated: Vec<Token> = comps
        .iter()
        .filter(|c| c.len() == 1)
        .map(|c| c[0])
        .collect();
    if isolated.len() < 2 {
        return Err(exhausted("need two isolated tokens for relations".into()));
    }
    let relation = isolated.pop().expect("checked");
    let aux_relation = isolated.pop().expect("checked");

    clusters.shuffle(&mut rng);
    let mut clusters = clusters.into_iter();
    let mut subject_clusters = Vec::new();
    if config.n_known > 0 {
        let need = config.n_known + config.n_test;
        let mut capacity = 0;
        while capacity < need && subject_clusters.len() < config.n_known {
            let c = clusters
                .next()
                .ok_or_else(|| exhausted(format!("{need} clustered subjects requested")))?;
            capacity += c.len();
            subject_clusters.push(c);
        }
        if capacity < need {
            return Err(exhausted(format!(
                "{} subject clusters hold {capacity} < {need} facts",
                subject_clusters.len()
            )));
        }
    }
    let n_answer_clusters = subject_clusters.len().div_ceil(config.answers_per_cluster);
    let answer_clusters: Vec<Vec<Token>> = clusters.by_ref().take(n_answer_clusters).collect();
    if answer_clusters.len() < n_answer_clusters {
        return Err(exhausted(format!("{n_answer_clusters} answer clusters")));
    }

    let answer_of =
        |k: usize| answer_clusters[k / config.answers_per_cluster][k % config.answers_per_cluster];
    let mut known = TripleSet::new();
    let mut rest = Vec::new();
    for (k, members) in subject_clusters.iter().enumerate() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        known.push(KnowledgeTriple::new(m[0], relation, answer_of(k))?);
        rest.extend(m[1..].iter().map(|&s| (s, k)));
    }
    rest.shuffle(&mut rng);
    let mut rest = rest.into_iter();
    while known.len() < config.n_known {
        let (s, k) = rest.next().expect("capacity checked");
        known.push(KnowledgeTriple::new(s, relation, answer_of(k))?);
    }
    let mut test = TripleSet::new();
    if config.n_known > 0 {
        for (s, k) in rest.by_ref().take(config.n_test) {
            test.push(KnowledgeTriple::new(s, relation, answer_of(k))?);
        }
    }

    isolated.shuffle(&mut rng);
    let pool = config.unknown_answer_pool.min(config.n_unknown);
    if isolated.len() < config.n_unknown + pool {
        return Err(exhausted(format!(
            "{} isolated tokens for {} unknown subjects and {pool} answers",
            isolated.len(),
            config.n_unknown
        )));
    }
    let (subjects, others) = isolated.split_at(config.n_unknown);
    let (answers, fillers) = others.split_at(pool);
    let unknown: TripleSet = subjects
        .iter()
        .enumerate()
        .map(|(i, &s)| KnowledgeTriple::new(s, relation, answers[i % pool]))
        .collect::<Result<_>>()?;

    let mut fillers = fillers.to_vec();
    fillers.sort();
    let filler_set: BTreeSet<Token> = fillers.iter().copied().collect();
    let entities = space
        .tokens()
        .filter(|t| *t != relation && *t != aux_relation && !filler_set.contains(t))
        .collect();
    Ok(DatasetSpec {
        space: space.clone(),
        relation,
        aux_relation,
        entities,
        fillers,
        subject_clusters,
        known,
        unknown,
        test,
        perturbed: TripleSet::new(),
        labels: None,
    })
}

/// Copies each source fact onto a fresh subject token placed at cosine 0.5
/// from the original subject and farther than ε from every other token.
///
/// Returns the dataset rebound to the extended space; the new subjects join
/// the entity set.
pub fn add_perturbed(
    dataset: &DatasetSpec,
    sources: &[KnowledgeTriple],
    seed: u64,
) -> Result<DatasetSpec> {
    let space = &dataset.space;
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<ndarray::Array1<f64>> = Vec::new();
    let sin = (1.0 - PERTURB_COSINE * PERTURB_COSINE).sqrt();
    for t in sources {
        let u = space.embedding(t.subject).to_owned();
        let mut placed = false;
        for _ in 0..MAX_PERTURB_TRIES {
            let w = random_unit_orthogonal(&mut rng, space.dim(), std::slice::from_ref(&u));
            let v = &u * PERTURB_COSINE + &w * sin;
            let isolated = space
                .embeddings()
                .rows()
                .into_iter()
                .chain(rows.iter().map(|r| r.view()))
                .all(|e| {
                    let d = &e - &v;
                    d.dot(&d).sqrt() > space.epsilon()
                });
            if isolated {
                rows.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Construction(format!(
                "could not isolate a perturbed copy of subject {}",
                t.subject
            )));
        }
    }
    let mut m = Array2::zeros((rows.len(), space.dim()));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    let extended = Arc::new(space.extend(&m)?);
    let base = space.vocab_size();
    let mut out = dataset.clone();
    out.space = extended;
    out.labels = None;
    for (i, t) in sources.iter().enumerate() {
        let s = Token(base + i);
        out.entities.insert(s);
        out.perturbed
            .push(KnowledgeTriple::new(s, t.relation, t.answer)?);
    }
    Ok(out)
}

/// Neighbour counts per subject, for audits.
pub fn subject_degrees(
    space: &EmbeddingSpace,
    triples: &[KnowledgeTriple],
) -> BTreeMap<Token, usize> {
    triples
        .iter()
        .map(|t| (t.subject, space.epsilon_neighborhood(t.subject).len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Label;
    use crate::harness::config::{ExperimentConfig, SpaceConfig};
    use crate::harness::experiments::build_space;
    use crate::transformer::BaseInit;

    fn default_space(seed: u64) -> Arc<EmbeddingSpace> {
        build_space(&ExperimentConfig::default(), seed).unwrap()
    }

    #[test]
    fn empty_request_gives_empty_dataset() {
        let cfg = DatasetConfig {
            n_known: 0,
            n_unknown: 0,
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&default_space(0), &cfg, 0).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn neighbourhood_audit() {
        let space = default_space(3);
        let ds = generate_dataset(&space, &DatasetConfig::default(), 3).unwrap();
        assert_eq!(
            (ds.known.len(), ds.unknown.len(), ds.test.len()),
            (40, 40, 50)
        );
        for (s, deg) in subject_degrees(&space, &ds.known) {
            assert!(deg >= 4, "known subject {s} has {deg} neighbours");
        }
        for t in ds.known.iter().chain(ds.test.iter()) {
            assert!(space.epsilon_neighborhood(t.answer).len() >= 4);
        }
        for (s, deg) in subject_degrees(&space, &ds.unknown) {
            assert_eq!(deg, 0, "unknown subject {s}");
        }
        for t in ds.unknown.iter() {
            assert!(space.epsilon_neighborhood(t.answer).is_empty());
        }
        assert!(space.epsilon_neighborhood(ds.relation).is_empty());
        // Every subject cluster has a training member and all (s, r) keys are distinct.
        for c in &ds.subject_clusters {
            assert!(ds.known.iter().any(|t| c.contains(&t.subject)));
        }
        let keys: BTreeSet<Token> = ds.entries().map(|(t, _, _)| t.subject).collect();
        assert_eq!(keys.len(), 130);
        assert!(!ds.entities.contains(&ds.relation));
        assert!(ds.fillers.iter().all(|f| !ds.entities.contains(f)));
    }

    #[test]
    fn inventory_exhaustion_is_config_error() {
        let cfg = DatasetConfig {
            n_known: 200,
            n_unknown: 200,
            ..DatasetConfig::default()
        };
        assert!(matches!(
            generate_dataset(&default_space(0), &cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn perturbed_copies_are_isolated_and_unknown() {
        let space = default_space(1);
        let ds = generate_dataset(&space, &DatasetConfig::default(), 1).unwrap();
        let sources: Vec<_> = ds.known.iter().take(5).copied().collect();
        let mut pd = add_perturbed(&ds, &sources, 9).unwrap();
        assert_eq!(pd.space.vocab_size(), space.vocab_size() + 5);
        let base = ModelParams::base(pd.space.clone(), &BaseInit::default(), 4);
        pd.label_with(&base, &ProbeConfig::default()).unwrap();
        let labels = pd.labels.as_ref().unwrap();
        for (t, l) in pd.perturbed.iter().zip(&labels[80..]) {
            assert!(pd.space.epsilon_neighborhood(t.subject).is_empty());
            assert_eq!(l.label, Label::Unknown);
        }
        let mut buf = Vec::new();
        pd.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 40 + 40 + 50 + 5);
        assert!(text
            .lines()
            .last()
            .unwrap()
            .ends_with("perturbed,perturbed-unknown,unknown"));
    }

    #[test]
    fn default_cluster_spec_counts() {
        let s = SpaceConfig::default().cluster_spec();
        assert_eq!(s.num_clusters(), 27);
        assert_eq!(s.clustered_tokens(), 135);
    }
}
