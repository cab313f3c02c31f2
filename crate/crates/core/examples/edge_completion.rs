//! Fine-tunes on one clustered fact and lists the relation edges it adds.

use factgap::graph::{edge_delta, extract_relation_graph};
use factgap::harness::experiments::prepare_base;
use factgap::harness::ExperimentConfig;
use factgap::trainer::{train, TrainConfig};

fn main() -> factgap::Result<()> {
    let config = ExperimentConfig::default();
    let (space, ds, base) = prepare_base(&config, 0)?;
    let fact = ds.known[0];
    let before = extract_relation_graph(&base, ds.relation, &ds.entities)?;
    let tc = TrainConfig {
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let (tuned, report) = train(&base, &vec![fact].into(), &tc)?;
    let after = extract_relation_graph(&tuned, ds.relation, &ds.entities)?;
    let delta = edge_delta(&before, &after)?;
    println!("trained {fact:?} for {} epochs", report.epochs_run);
    println!("N(s) = {:?}", space.closure(fact.subject, 1));
    println!("N(a) = {:?}", space.closure(fact.answer, 1));
    println!("added {:?}", delta.added);
    println!("removed {:?}", delta.removed);
    Ok(())
}
