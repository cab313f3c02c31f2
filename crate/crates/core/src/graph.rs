//! Fact triples, extracted relation graphs, and their set algebra.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Deref;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{parse_field, EmbeddingSpace, Token};
use crate::error::{Error, Result};
use crate::transformer::{predict_next, ModelParams};

/// A fact `(s, r, a)` with pairwise distinct tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub subject: Token,
    pub relation: Token,
    pub answer: Token,
}

impl KnowledgeTriple {
    pub fn new(subject: Token, relation: Token, answer: Token) -> Result<Self> {
        if subject == relation || subject == answer || relation == answer {
            return Err(Error::Contract(format!(
                "triple ({subject}, {relation}, {answer}) must use distinct tokens"
            )));
        }
        Ok(Self {
            subject,
            relation,
            answer,
        })
    }

    pub fn edge(&self) -> (Token, Token) {
        (self.subject, self.answer)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleSet(Vec<KnowledgeTriple>);

impl TripleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: KnowledgeTriple) {
        self.0.push(t);
    }

    pub fn into_vec(self) -> Vec<KnowledgeTriple> {
        self.0
    }

    pub fn relations(&self) -> BTreeSet<Token> {
        self.0.iter().map(|t| t.relation).collect()
    }

    pub fn with_relation(&self, r: Token) -> TripleSet {
        self.0.iter().filter(|t| t.relation == r).copied().collect()
    }
}

impl Deref for TripleSet {
    type Target = [KnowledgeTriple];
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl From<Vec<KnowledgeTriple>> for TripleSet {
    fn from(v: Vec<KnowledgeTriple>) -> Self {
        Self(v)
    }
}

impl FromIterator<KnowledgeTriple> for TripleSet {
    fn from_iter<I: IntoIterator<Item = KnowledgeTriple>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TripleSet {
    type Item = &'a KnowledgeTriple;
    type IntoIter = std::slice::Iter<'a, KnowledgeTriple>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub type Edge = (Token, Token);

/// Directed relation edges over entity nodes, plus the similarity edges the
/// embedding space induces on those nodes.
///
/// `relation == None` marks a relation-agnostic graph (reasoning chains).
#[derive(Debug, Clone)]
pub struct RelationGraph {
    space: Arc<EmbeddingSpace>,
    relation: Option<Token>,
    nodes: BTreeSet<Token>,
    relation_edges: BTreeSet<Edge>,
    sim_edges: BTreeSet<Edge>,
}

impl PartialEq for RelationGraph {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space)
            && self.relation == other.relation
            && self.nodes == other.nodes
            && self.relation_edges == other.relation_edges
    }
}

fn same_space(a: &Arc<EmbeddingSpace>, b: &Arc<EmbeddingSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl RelationGraph {
    pub fn new(
        space: Arc<EmbeddingSpace>,
        relation: Option<Token>,
        nodes: BTreeSet<Token>,
        relation_edges: BTreeSet<Edge>,
    ) -> Result<Self> {
        if let Some(t) = nodes.iter().find(|t| !space.contains(**t)) {
            return Err(Error::Contract(format!("node {t} outside vocabulary")));
        }
        if let Some(r) = relation {
            if nodes.contains(&r) {
                return Err(Error::Contract(format!("relation {r} listed as a node")));
            }
        }
        for &(u, w) in &relation_edges {
            if u == w {
                return Err(Error::Contract(format!("self-loop on {u}")));
            }
            if !nodes.contains(&u) || !nodes.contains(&w) {
                return Err(Error::Contract(format!(
                    "edge ({u}, {w}) leaves the node set"
                )));
            }
        }
        let sim_edges = similarity_edges(&space, &nodes);
        Ok(Self {
            space,
            relation,
            nodes,
            relation_edges,
            sim_edges,
        })
    }

    pub fn empty(
        space: Arc<EmbeddingSpace>,
        relation: Option<Token>,
        nodes: BTreeSet<Token>,
    ) -> Result<Self> {
        Self::new(space, relation, nodes, BTreeSet::new())
    }

    pub fn space(&self) -> &Arc<EmbeddingSpace> {
        &self.space
    }

    pub fn relation(&self) -> Option<Token> {
        self.relation
    }

    pub fn nodes(&self) -> &BTreeSet<Token> {
        &self.nodes
    }

    pub fn relation_edges(&self) -> &BTreeSet<Edge> {
        &self.relation_edges
    }

    /// Unordered similarity pairs stored as `(u, v)` with `u < v`.
    pub fn sim_edges(&self) -> &BTreeSet<Edge> {
        &self.sim_edges
    }

    pub fn edge_count(&self) -> usize {
        self.relation_edges.len()
    }

    pub fn contains_edge(&self, s: Token, a: Token) -> bool {
        self.relation_edges.contains(&(s, a))
    }

    pub fn out_degree(&self, s: Token) -> usize {
        self.relation_edges
            .range((s, Token(0))..=(s, Token(usize::MAX)))
            .count()
    }

    /// Line format: `REL r` (or `REL *`), then sorted `N t`, `E s a`, `S u v` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.relation {
            Some(r) => writeln!(out, "REL {r}"),
            None => writeln!(out, "REL *"),
        }
        .expect("String write");
        for n in &self.nodes {
            writeln!(out, "N {n}").expect("String write");
        }
        for (s, a) in &self.relation_edges {
            writeln!(out, "E {s} {a}").expect("String write");
        }
        for (u, v) in &self.sim_edges {
            writeln!(out, "S {u} {v}").expect("String write");
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; `S` lines must match the space.
    pub fn from_text(text: &str, space: Arc<EmbeddingSpace>) -> Result<Self> {
        let mut relation = None;
        let mut seen_rel = false;
        let mut nodes = BTreeSet::new();
        let mut edges = BTreeSet::new();
        let mut sims = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let ln = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["REL", r] if !seen_rel => {
                    seen_rel = true;
                    if *r != "*" {
                        relation = Some(Token(parse_field(r, ln)?));
                    }
                }
                ["N", t] => {
                    nodes.insert(Token(parse_field(t, ln)?));
                }
                ["E", s, a] => {
                    edges.insert((Token(parse_field(s, ln)?), Token(parse_field(a, ln)?)));
                }
                ["S", u, v] => {
                    sims.insert((Token(parse_field(u, ln)?), Token(parse_field(v, ln)?)));
                }
                _ => return Err(Error::parse(ln, format!("unrecognised line `{line}`"))),
            }
        }
        if !seen_rel {
            return Err(Error::parse(1, "missing REL line"));
        }
        let g =
            Self::new(space, relation, nodes, edges).map_err(|e| Error::parse(0, e.to_string()))?;
        if g.sim_edges != sims {
            return Err(Error::parse(
                0,
                "similarity edges disagree with the embedding space",
            ));
        }
        Ok(g)
    }
}

fn similarity_edges(space: &EmbeddingSpace, nodes: &BTreeSet<Token>) -> BTreeSet<Edge> {
    let v: Vec<Token> = nodes.iter().copied().collect();
    let mut out = BTreeSet::new();
    for (i, &a) in v.iter().enumerate() {
        for &b in &v[i + 1..] {
            if space.are_neighbors(a, b) {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Greedy `(s, r) → t` prediction for every entity `s`.
///
/// Edges are kept only when `t` is another entity: predictions that land on
/// fillers or relations are dropped, and so are echoes `t = s`, which the
/// pre-fine-tuning model emits for every subject it knows nothing about.
pub fn extract_relation_graph(
    params: &ModelParams,
    relation: Token,
    entities: &BTreeSet<Token>,
) -> Result<RelationGraph> {
    if entities.contains(&relation) {
        return Err(Error::Contract(format!(
            "relation {relation} is in the entity set"
        )));
    }
    let space = params.space().clone();
    if let Some(t) = entities.iter().find(|t| !space.contains(**t)) {
        return Err(Error::Contract(format!("entity {t} outside vocabulary")));
    }
    if !space.contains(relation) {
        return Err(Error::Contract(format!(
            "relation {relation} outside vocabulary"
        )));
    }
    let subjects: Vec<Token> = entities.iter().copied().collect();
    let edges: BTreeSet<Edge> = subjects
        .par_iter()
        .filter_map(|&s| {
            let t = predict_next(params, &[s, relation]);
            (t != s && entities.contains(&t)).then_some((s, t))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    RelationGraph::new(space, Some(relation), entities.clone(), edges)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphDelta {
    pub added: BTreeSet<Edge>,
    pub removed: BTreeSet<Edge>,
}

pub fn edge_delta(before: &RelationGraph, after: &RelationGraph) -> Result<GraphDelta> {
    if before.nodes != after.nodes {
        return Err(Error::Contract(
            "edge_delta needs identical node sets".into(),
        ));
    }
    if before.relation != after.relation {
        return Err(Error::Contract("edge_delta needs the same relation".into()));
    }
    Ok(GraphDelta {
        added: after
            .relation_edges
            .difference(&before.relation_edges)
            .copied()
            .collect(),
        removed: before
            .relation_edges
            .difference(&after.relation_edges)
            .copied()
            .collect(),
    })
}

/// Node and edge union. A relation-agnostic operand adopts the other's relation.
pub fn union(g1: &RelationGraph, g2: &RelationGraph) -> Result<RelationGraph> {
    if !same_space(&g1.space, &g2.space) {
        return Err(Error::Contract(
            "graphs live in different embedding spaces".into(),
        ));
    }
    let relation = match (g1.relation, g2.relation) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Contract(format!(
                "cannot union relations {a} and {b}"
            )))
        }
        (a, b) => a.or(b),
    };
    let nodes = g1.nodes.union(&g2.nodes).copied().collect();
    let edges = g1
        .relation_edges
        .union(&g2.relation_edges)
        .copied()
        .collect();
    RelationGraph::new(g1.space.clone(), relation, nodes, edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: usize,
    pub indicators: Vec<u8>,
}

/// Per-triple indicator of `(s, a)` being a relation edge.
pub fn coverage(graph: &RelationGraph, testset: &[KnowledgeTriple]) -> Result<Coverage> {
    if let Some(r) = graph.relation {
        if let Some(t) = testset.iter().find(|t| t.relation != r) {
            return Err(Error::Contract(format!(
                "test triple relation {} differs from graph relation {r}",
                t.relation
            )));
        }
    }
    let indicators: Vec<u8> = testset
        .iter()
        .map(|t| u8::from(graph.contains_edge(t.subject, t.answer)))
        .collect();
    Ok(Coverage {
        covered: indicators.iter().map(|&b| b as usize).sum(),
        indicators,
    })
}
