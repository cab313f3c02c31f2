//! Gap statistics shared by the graph-level and experiment-level code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{coverage, KnowledgeTriple, RelationGraph};

/// Coverage-based factuality gap between a known-trained and an unknown-trained model.
///
/// `delta = (covered_kn − covered_unk) / n_test`. Starred fields are the same
/// quantities after a prompt graph is unioned into both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub experiment: String,
    pub seed: u64,
    pub n_test: usize,
    pub covered_kn: usize,
    pub covered_unk: usize,
    pub delta: f64,
    pub covered_kn_star: Option<usize>,
    pub covered_unk_star: Option<usize>,
    pub delta_star: Option<f64>,
    pub e_kn: usize,
    pub e_unk: usize,
    pub e_prompt: Option<usize>,
    /// `|E_prompt ∩ E_kn|`.
    pub prompt_overlap_kn: Option<usize>,
    /// `|E_prompt ∩ E_unk|`.
    pub prompt_overlap_unk: Option<usize>,
    pub num_nodes: usize,
    /// `n_test / |V|²`.
    pub lambda: f64,
    /// `λ (|E_kn| − |E_unk|)`: expected coverage difference under uniform edges.
    pub edge_gap: f64,
    /// Same with prompt edges unioned into both arms.
    pub edge_gap_star: Option<f64>,
    pub acc_kn: Option<f64>,
    pub acc_unk: Option<f64>,
    pub acc_kn_star: Option<f64>,
    pub acc_unk_star: Option<f64>,
    pub target_gamma: Option<f64>,
    /// Measured mean cosine between test subjects and their training neighbours.
    pub gamma: Option<f64>,
    pub tau: f64,
    /// Per-triple implant bound `(γ/τ)²`.
    pub markov_bound: Option<f64>,
    /// `(γ/τ)² · n_train`.
    pub markov_bound_total: Option<f64>,
    /// Fraction of test triples covered by the known-trained model.
    pub implant_rate: Option<f64>,
    pub indicators_kn: Vec<u8>,
    pub indicators_unk: Vec<u8>,
    pub indicators_kn_star: Option<Vec<u8>>,
    pub indicators_unk_star: Option<Vec<u8>>,
}

pub(crate) fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn signed_fraction(a: usize, b: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        (a as f64 - b as f64) / den as f64
    }
}

impl GapReport {
    /// Coverage, edge counts and λ for two graphs over the same node universe.
    pub fn from_graphs(
        g_kn: &RelationGraph,
        g_unk: &RelationGraph,
        testset: &[KnowledgeTriple],
    ) -> Result<Self> {
        if g_kn.nodes() != g_unk.nodes() || g_kn.relation() != g_unk.relation() {
            return Err(Error::Contract(
                "gap needs graphs with the same relation and node set".into(),
            ));
        }
        let kn = coverage(g_kn, testset)?;
        let unk = coverage(g_unk, testset)?;
        let n_test = testset.len();
        let v = g_kn.nodes().len();
        let lambda = fraction(n_test, v * v);
        let tau = 1.0 - g_kn.space().epsilon().powi(2) / 2.0;
        Ok(Self {
            experiment: String::new(),
            seed: 0,
            n_test,
            covered_kn: kn.covered,
            covered_unk: unk.covered,
            delta: signed_fraction(kn.covered, unk.covered, n_test),
            covered_kn_star: None,
            covered_unk_star: None,
            delta_star: None,
            e_kn: g_kn.edge_count(),
            e_unk: g_unk.edge_count(),
            e_prompt: None,
            prompt_overlap_kn: None,
            prompt_overlap_unk: None,
            num_nodes: v,
            lambda,
            edge_gap: lambda * (g_kn.edge_count() as f64 - g_unk.edge_count() as f64),
            edge_gap_star: None,
            acc_kn: None,
            acc_unk: None,
            acc_kn_star: None,
            acc_unk_star: None,
            target_gamma: None,
            gamma: None,
            tau,
            markov_bound: None,
            markov_bound_total: None,
            implant_rate: None,
            indicators_kn: kn.indicators,
            indicators_unk: unk.indicators,
            indicators_kn_star: None,
            indicators_unk_star: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
