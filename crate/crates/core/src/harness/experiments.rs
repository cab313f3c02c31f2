//! The gap, OOD-decay, ICL-mitigation and small-data experiments.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{generate_clustered_space, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::graph::{extract_relation_graph, union, KnowledgeTriple, RelationGraph, TripleSet};
use crate::harness::config::ExperimentConfig;
use crate::harness::dataset::{generate_dataset, DatasetSpec};
use crate::harness::ood::make_ood_testset;
use crate::icl::{
    augmented_gap, cot_subgraph, predict_with_prompt, prompt_subgraph, CoTChain, FewShotPrompt,
    Prompt,
};
use crate::report::{fraction, GapReport};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trainer::{exact_match_accuracy, train, TrainReport};
use crate::transformer::ModelParams;

/// Seed streams for the independent parts of one run.
pub mod stream {
    pub const SPACE: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const OOD: u64 = 6;
    pub const PROMPT: u64 = 7;
    pub const SUBSET: u64 = 8;
}

/// Space, dataset, base model and both fine-tuned arms for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub space: Arc<EmbeddingSpace>,
    pub dataset: DatasetSpec,
    pub base: ModelParams,
    pub known_model: ModelParams,
    pub unknown_model: ModelParams,
    pub known_train: TrainReport,
    pub unknown_train: TrainReport,
}

pub fn build_space(config: &ExperimentConfig, seed: u64) -> Result<Arc<EmbeddingSpace>> {
    let s = &config.space;
    let space = generate_clustered_space(
        &s.cluster_spec(),
        s.dim,
        s.epsilon,
        derive_seed(seed, stream::SPACE),
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Arc::new(space))
}

/// Space, dataset (labelled on the base model) and base parameters.
pub fn prepare_base(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Arc<EmbeddingSpace>, DatasetSpec, ModelParams)> {
    config.validate()?;
    let space = build_space(config, seed)?;
    let mut dataset =
        generate_dataset(&space, &config.dataset, derive_seed(seed, stream::DATASET))?;
    let base = ModelParams::base(
        space.clone(),
        &config.model,
        derive_seed(seed, stream::INIT),
    );
    let probe = probe_config(config, seed);
    dataset.label_with(&base, &probe)?;
    Ok((space, dataset, base))
}

fn probe_config(config: &ExperimentConfig, seed: u64) -> crate::classifier::ProbeConfig {
    let mut p = config.probe.clone();
    p.seed = derive_seed(seed ^ p.seed, stream::PROBE);
    p
}

fn train_arm(
    config: &ExperimentConfig,
    seed: u64,
    base: &ModelParams,
    data: &TripleSet,
) -> Result<(ModelParams, TrainReport)> {
    let tc = config
        .train
        .to_train_config(data, derive_seed(seed, stream::SHUFFLE));
    train(base, data, &tc)
}

/// Trains both arms from the same base parameters.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (space, dataset, base) = prepare_base(config, seed)?;
    if dataset.known.is_empty() || dataset.unknown.is_empty() {
        return Err(Error::Config(
            "both training splits must be non-empty".into(),
        ));
    }
    let (known_model, known_train) = train_arm(config, seed, &base, &dataset.known)?;
    let (unknown_model, unknown_train) = train_arm(config, seed, &base, &dataset.unknown)?;
    Ok(Prepared {
        config: config.clone(),
        seed,
        space,
        dataset,
        base,
        known_model,
        unknown_model,
        known_train,
        unknown_train,
    })
}

/// Graph-level plus behavioural results of prompting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclReport {
    /// Few-shot prompt graph unioned into both arms; behavioural accuracies in the `acc_*_star` fields.
    pub fewshot: GapReport,
    /// One reasoning chain per test fact.
    pub cot: GapReport,
    pub demos: Vec<KnowledgeTriple>,
    /// Fraction of test facts where prompted prediction success matches star-graph coverage.
    pub agreement_kn: f64,
    pub agreement_unk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallDataReport {
    pub seed: u64,
    pub fraction: f64,
    pub n_subset: usize,
    pub n_full: usize,
    pub full: GapReport,
    pub subset: GapReport,
    /// `acc*(subset) − acc*(full)`, prompted accuracy on the test split.
    pub prompted_difference: f64,
    /// Same without the prompt.
    pub bare_difference: f64,
}

impl Prepared {
    pub fn graphs(&self) -> Result<(RelationGraph, RelationGraph)> {
        let r = self.dataset.relation;
        let e = &self.dataset.entities;
        Ok((
            extract_relation_graph(&self.known_model, r, e)?,
            extract_relation_graph(&self.unknown_model, r, e)?,
        ))
    }

    fn stamp(&self, mut rep: GapReport, experiment: &str) -> GapReport {
        rep.experiment = experiment.to_string();
        rep.seed = self.seed;
        rep
    }

    pub fn gap_report(&self) -> Result<GapReport> {
        let (g_kn, g_unk) = self.graphs()?;
        let test = &self.dataset.test;
        let mut rep = GapReport::from_graphs(&g_kn, &g_unk, test)?;
        rep.acc_kn = Some(exact_match_accuracy(&self.known_model, test));
        rep.acc_unk = Some(exact_match_accuracy(&self.unknown_model, test));
        rep.implant_rate = Some(fraction(rep.covered_kn, rep.n_test));
        Ok(self.stamp(rep, "gap"))
    }

    pub fn ood_reports(&self) -> Result<Vec<GapReport>> {
        self.config
            .ood
            .gammas
            .iter()
            .map(|&g| self.ood_report(g))
            .collect()
    }

    pub fn ood_report(&self, gamma: f64) -> Result<GapReport> {
        let ds = &self.dataset;
        let ood = make_ood_testset(
            &self.space,
            &ds.known,
            &ds.test,
            gamma,
            derive_seed(self.seed, stream::OOD),
        )?;
        let kn = self.known_model.rebind(ood.space.clone())?;
        let unk = self.unknown_model.rebind(ood.space.clone())?;
        let mut entities = ds.entities.clone();
        entities.extend(ood.new_tokens.iter().copied());
        let g_kn = extract_relation_graph(&kn, ds.relation, &entities)?;
        let g_unk = extract_relation_graph(&unk, ds.relation, &entities)?;
        let mut rep = GapReport::from_graphs(&g_kn, &g_unk, &ood.test)?;
        rep.acc_kn = Some(exact_match_accuracy(&kn, &ood.test));
        rep.acc_unk = Some(exact_match_accuracy(&unk, &ood.test));
        rep.target_gamma = Some(gamma);
        rep.gamma = Some(ood.achieved_gamma);
        let bound = (ood.achieved_gamma / rep.tau).powi(2);
        rep.markov_bound = Some(bound);
        rep.markov_bound_total = Some(bound * ds.known.len() as f64);
        rep.implant_rate = Some(fraction(rep.covered_kn, rep.n_test));
        Ok(self.stamp(rep, "ood"))
    }

    /// Seeded demos from the known split.
    pub fn fewshot_prompt(&self, pool: &TripleSet) -> Result<FewShotPrompt> {
        let n = self.config.icl.demos;
        if n == 0 {
            return Err(Error::Contract(
                "a few-shot prompt needs at least one demo".into(),
            ));
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, stream::PROMPT));
        let mut demos: Vec<KnowledgeTriple> = pool.to_vec();
        demos.shuffle(&mut rng);
        demos.truncate(n);
        FewShotPrompt::new(demos)
    }

    fn prompted_accuracy(&self, params: &ModelParams, prompt: &Prompt) -> Vec<bool> {
        self.dataset
            .test
            .par_iter()
            .map(|t| predict_with_prompt(params, prompt, t.subject, t.relation) == t.answer)
            .collect()
    }

    /// Chains `(aux, filler), (r, a)` for every test fact.
    pub fn cot_chains(&self) -> Result<Vec<CoTChain>> {
        let ds = &self.dataset;
        ds.test
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut steps = Vec::with_capacity(2);
                if !ds.fillers.is_empty() {
                    steps.push((ds.aux_relation, ds.fillers[i % ds.fillers.len()]));
                }
                steps.push((t.relation, t.answer));
                CoTChain::new(t.subject, steps)
            })
            .collect()
    }

    pub fn icl_report(&self) -> Result<IclReport> {
        let (g_kn, g_unk) = self.graphs()?;
        let test = &self.dataset.test;
        let prompt = self.fewshot_prompt(&self.dataset.known)?;
        let p_graph = prompt_subgraph(&prompt, &self.space, self.config.space.closure_depth)?;
        let mut fewshot = augmented_gap(&g_kn, &g_unk, &p_graph, test)?;
        fewshot.acc_kn = Some(exact_match_accuracy(&self.known_model, test));
        fewshot.acc_unk = Some(exact_match_accuracy(&self.unknown_model, test));
        let wrapped = Prompt::FewShot(prompt.clone());
        let hits_kn = self.prompted_accuracy(&self.known_model, &wrapped);
        let hits_unk = self.prompted_accuracy(&self.unknown_model, &wrapped);
        let count = |h: &[bool]| h.iter().filter(|&&b| b).count();
        fewshot.acc_kn_star = Some(fraction(count(&hits_kn), test.len()));
        fewshot.acc_unk_star = Some(fraction(count(&hits_unk), test.len()));
        let agree = |h: &[bool], ind: &[u8]| {
            let n = h.iter().zip(ind).filter(|(b, i)| **b == (**i == 1)).count();
            fraction(n, h.len())
        };
        let agreement_kn = agree(
            &hits_kn,
            fewshot.indicators_kn_star.as_deref().unwrap_or(&[]),
        );
        let agreement_unk = agree(
            &hits_unk,
            fewshot.indicators_unk_star.as_deref().unwrap_or(&[]),
        );

        let mut cot_graph = RelationGraph::empty(self.space.clone(), None, BTreeSet::new())?;
        for c in self.cot_chains()? {
            cot_graph = union(&cot_graph, &cot_subgraph(&c, &self.space)?)?;
        }
        let cot = augmented_gap(&g_kn, &g_unk, &cot_graph, test)?;
        Ok(IclReport {
            fewshot: self.stamp(fewshot, "icl"),
            cot: self.stamp(cot, "icl_cot"),
            demos: prompt.demos().to_vec(),
            agreement_kn,
            agreement_unk,
        })
    }

    /// Retrains the known arm on a seeded fraction of the known split and
    /// compares prompted test accuracy with the full arm.
    pub fn small_data(&self, frac: f64) -> Result<SmallDataReport> {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::Config(format!("fraction {frac} outside (0, 1]")));
        }
        let full = &self.dataset.known;
        let n_subset = (frac * full.len() as f64).round() as usize;
        if n_subset == 0 {
            return Err(Error::Config(format!(
                "fraction {frac} of {} facts rounds to an empty subset",
                full.len()
            )));
        }
        let subset: TripleSet = if n_subset == full.len() {
            full.clone()
        } else {
            let mut idx: Vec<usize> = (0..full.len()).collect();
            idx.shuffle(&mut rng_from_seed(derive_seed(self.seed, stream::SUBSET)));
            idx.truncate(n_subset);
            idx.sort_unstable();
            idx.into_iter().map(|i| full[i]).collect()
        };
        let sub_model = if n_subset == full.len() {
            self.known_model.clone()
        } else {
            train_arm(&self.config, self.seed, &self.base, &subset)?.0
        };

        let prompt = self.fewshot_prompt(&subset)?;
        let p_graph = prompt_subgraph(&prompt, &self.space, self.config.space.closure_depth)?;
        let wrapped = Prompt::FewShot(prompt);
        let r = self.dataset.relation;
        let e = &self.dataset.entities;
        let test = &self.dataset.test;
        let g_unk = extract_relation_graph(&self.unknown_model, r, e)?;
        let arm = |model: &ModelParams, name: &str| -> Result<GapReport> {
            let g = extract_relation_graph(model, r, e)?;
            let mut rep = augmented_gap(&g, &g_unk, &p_graph, test)?;
            let hits = self.prompted_accuracy(model, &wrapped);
            let hits_unk = self.prompted_accuracy(&self.unknown_model, &wrapped);
            let count = |h: &[bool]| h.iter().filter(|&&b| b).count();
            rep.acc_kn = Some(exact_match_accuracy(model, test));
            rep.acc_unk = Some(exact_match_accuracy(&self.unknown_model, test));
            rep.acc_kn_star = Some(fraction(count(&hits), test.len()));
            rep.acc_unk_star = Some(fraction(count(&hits_unk), test.len()));
            Ok(self.stamp(rep, name))
        };
        let full_rep = arm(&self.known_model, "smalldata_full")?;
        let sub_rep = arm(&sub_model, "smalldata_subset")?;
        let opt = |x: Option<f64>| x.unwrap_or(0.0);
        Ok(SmallDataReport {
            seed: self.seed,
            fraction: frac,
            n_subset,
            n_full: full.len(),
            prompted_difference: opt(sub_rep.acc_kn_star) - opt(full_rep.acc_kn_star),
            bare_difference: opt(sub_rep.acc_kn) - opt(full_rep.acc_kn),
            full: full_rep,
            subset: sub_rep,
        })
    }
}

pub fn run_gap_experiment(config: &ExperimentConfig, seed: u64) -> Result<GapReport> {
    prepare(config, seed)?.gap_report()
}

/// One report per configured γ tier, sharing the two trained arms.
pub fn run_ood_decay(config: &ExperimentConfig, seed: u64) -> Result<Vec<GapReport>> {
    prepare(config, seed)?.ood_reports()
}

pub fn run_icl_mitigation(config: &ExperimentConfig, seed: u64) -> Result<IclReport> {
    prepare(config, seed)?.icl_report()
}

pub fn run_small_data_comparison(
    config: &ExperimentConfig,
    frac: f64,
    seed: u64,
) -> Result<SmallDataReport> {
    prepare(config, seed)?.small_data(frac)
}

/// Runs `f` for every seed in parallel; results come back in seed order.
pub fn for_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.par_iter().map(|&s| f(s)).collect()
}
