//! Few-shot and reasoning-chain prompts, their induced subgraphs, and the
//! prompt-augmented gap.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use crate::embedding::{EmbeddingSpace, Token};
use crate::error::{Error, Result};
use crate::graph::{union, Edge, KnowledgeTriple, RelationGraph};
use crate::report::{signed_fraction, GapReport};
use crate::transformer::{predict_next, ModelParams};

/// Demonstrations sharing one relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPrompt {
    demos: Vec<KnowledgeTriple>,
}

impl FewShotPrompt {
    pub fn new(demos: Vec<KnowledgeTriple>) -> Result<Self> {
        let Some(first) = demos.first() else {
            return Err(Error::Contract(
                "a few-shot prompt needs at least one demo".into(),
            ));
        };
        if demos.iter().any(|d| d.relation != first.relation) {
            return Err(Error::Contract("demos must share one relation".into()));
        }
        let distinct: BTreeSet<_> = demos.iter().collect();
        if distinct.len() != demos.len() {
            return Err(Error::Contract("demos must be distinct".into()));
        }
        Ok(Self { demos })
    }

    pub fn demos(&self) -> &[KnowledgeTriple] {
        &self.demos
    }

    pub fn relation(&self) -> Token {
        self.demos[0].relation
    }
}

/// Steps `(r_i, a_i)` about one subject; the last answer is the chain's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoTChain {
    subject: Token,
    steps: Vec<(Token, Token)>,
}

impl CoTChain {
    pub fn new(subject: Token, steps: Vec<(Token, Token)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Contract(
                "a reasoning chain needs at least one step".into(),
            ));
        }
        for &(r, a) in &steps {
            KnowledgeTriple::new(subject, r, a)?;
        }
        Ok(Self { subject, steps })
    }

    pub fn subject(&self) -> Token {
        self.subject
    }

    pub fn steps(&self) -> &[(Token, Token)] {
        &self.steps
    }

    pub fn final_answer(&self) -> Token {
        self.steps[self.steps.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    FewShot(FewShotPrompt),
    Chain(CoTChain),
}

/// `[s′₁, r, a′₁, …, s′ₙ, r, a′ₙ, s, r]`.
pub fn render_fewshot(prompt: &FewShotPrompt, subject: Token, relation: Token) -> Vec<Token> {
    let mut seq = Vec::with_capacity(3 * prompt.demos.len() + 2);
    for d in &prompt.demos {
        seq.extend([d.subject, d.relation, d.answer]);
    }
    seq.extend([subject, relation]);
    seq
}

/// `[s, r₁, a₁, …, s, rₙ, aₙ, s, r]`.
pub fn render_cot(chain: &CoTChain, relation: Token) -> Vec<Token> {
    let mut seq = Vec::with_capacity(3 * chain.steps.len() + 2);
    for &(r, a) in &chain.steps {
        seq.extend([chain.subject, r, a]);
    }
    seq.extend([chain.subject, relation]);
    seq
}

pub fn predict_with_prompt(
    params: &ModelParams,
    prompt: &Prompt,
    subject: Token,
    relation: Token,
) -> Token {
    let seq = match prompt {
        Prompt::FewShot(p) => render_fewshot(p, subject, relation),
        Prompt::Chain(c) => render_cot(c, relation),
    };
    predict_next(params, &seq)
}

/// Each demo contributes every pair in `closure(s′) × closure(a′)`, self-loops excluded.
pub fn prompt_subgraph(
    prompt: &FewShotPrompt,
    space: &Arc<EmbeddingSpace>,
    closure_depth: usize,
) -> Result<RelationGraph> {
    let mut nodes = BTreeSet::new();
    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    for d in &prompt.demos {
        let vs = space.closure(d.subject, closure_depth);
        let va = space.closure(d.answer, closure_depth);
        for &u in &vs {
            for &w in &va {
                if u != w {
                    edges.insert((u, w));
                }
            }
        }
        nodes.extend(vs);
        nodes.extend(va);
    }
    RelationGraph::new(space.clone(), Some(prompt.relation()), nodes, edges)
}

/// Relation-agnostic graph with an edge `(s, a_i)` per step.
pub fn cot_subgraph(chain: &CoTChain, space: &Arc<EmbeddingSpace>) -> Result<RelationGraph> {
    let mut nodes = BTreeSet::from([chain.subject]);
    let mut edges = BTreeSet::new();
    for &(_, a) in &chain.steps {
        nodes.insert(a);
        edges.insert((chain.subject, a));
    }
    RelationGraph::new(space.clone(), None, nodes, edges)
}

/// A base graph with prompt-induced graphs unioned in.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    pub base: RelationGraph,
    pub prompt_graph: RelationGraph,
    pub cot_graph: Option<RelationGraph>,
    pub star: RelationGraph,
}

impl AugmentedGraph {
    pub fn new(
        base: RelationGraph,
        prompt_graph: RelationGraph,
        cot_graph: Option<RelationGraph>,
    ) -> Result<Self> {
        let star = Self::combine(&base, &prompt_graph, cot_graph.as_ref())?;
        Ok(Self {
            base,
            prompt_graph,
            cot_graph,
            star,
        })
    }

    fn combine(
        base: &RelationGraph,
        prompt: &RelationGraph,
        cot: Option<&RelationGraph>,
    ) -> Result<RelationGraph> {
        let g = union(base, prompt)?;
        match cot {
            Some(c) => union(&g, c),
            None => Ok(g),
        }
    }

    /// Rebuilds `star` from the parts.
    pub fn recompute(&self) -> Result<RelationGraph> {
        Self::combine(&self.base, &self.prompt_graph, self.cot_graph.as_ref())
    }
}

/// Gap before and after unioning `prompt_graph` into both arms.
///
/// Coverage restricted to the original node universe is unchanged by prompt
/// nodes outside it, so star coverage is computed on the unions directly.
pub fn augmented_gap(
    g_kn: &RelationGraph,
    g_unk: &RelationGraph,
    prompt_graph: &RelationGraph,
    testset: &[KnowledgeTriple],
) -> Result<GapReport> {
    let mut rep = GapReport::from_graphs(g_kn, g_unk, testset)?;
    let kn_star = union(g_kn, prompt_graph)?;
    let unk_star = union(g_unk, prompt_graph)?;
    let cov_kn = crate::graph::coverage(&kn_star, testset)?;
    let cov_unk = crate::graph::coverage(&unk_star, testset)?;
    let p = prompt_graph.relation_edges();
    rep.e_prompt = Some(p.len());
    rep.prompt_overlap_kn = Some(p.intersection(g_kn.relation_edges()).count());
    rep.prompt_overlap_unk = Some(p.intersection(g_unk.relation_edges()).count());
    rep.edge_gap_star =
        Some(rep.lambda * (kn_star.edge_count() as f64 - unk_star.edge_count() as f64));
    rep.covered_kn_star = Some(cov_kn.covered);
    rep.covered_unk_star = Some(cov_unk.covered);
    rep.delta_star = Some(signed_fraction(cov_kn.covered, cov_unk.covered, rep.n_test));
    rep.indicators_kn_star = Some(cov_kn.indicators);
    rep.indicators_unk_star = Some(cov_unk.indicators);
    Ok(rep)
}

/// CSV manifest `demo_index,s,r,a`.
pub fn write_prompt_csv<W: Write>(w: W, prompt: &FewShotPrompt) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["demo_index", "s", "r", "a"])?;
    for (i, d) in prompt.demos.iter().enumerate() {
        out.write_record([
            i.to_string(),
            d.subject.to_string(),
            d.relation.to_string(),
            d.answer.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
