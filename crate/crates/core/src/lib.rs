//! Simulator for factual-knowledge dynamics in a one-layer attention model.
//!
//! A fixed, clustered embedding space stands in for pretraining. Fine-tuning
//! on fact triples `(s, r, a)` adds edges to the relation graph the model
//! induces; coverage of a held-out test set by that graph is what separates a
//! model trained on well-connected ("known") facts from one trained on
//! isolated ("unknown") facts.
//!
//! Modules, bottom up:
//! - [`embedding`]: vocabulary, ε-neighbourhoods, clustered space generation
//! - [`transformer`]: forward pass and greedy prediction
//! - [`trainer`]: loss, exact gradients, SGD
//! - [`graph`]: triples, relation-graph extraction, set algebra, coverage
//! - [`classifier`]: Known/Unknown labels by context probing
//! - [`icl`]: few-shot and chain prompts and their subgraphs
//! - [`harness`]: datasets, OOD test sets, experiments, outputs

pub mod classifier;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod harness;
pub mod icl;
pub mod report;
pub mod rng;
pub mod trainer;
pub mod transformer;

pub use embedding::{generate_clustered_space, ClusterSpec, EmbeddingSpace, Token};
pub use error::{Error, Result};
pub use graph::{KnowledgeTriple, RelationGraph, TripleSet};
pub use report::GapReport;
pub use transformer::{forward, predict_next, ModelParams};
