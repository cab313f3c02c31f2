//! Labels training facts as Known or Unknown by context probing.

use factgap::classifier::{partition_dataset, write_manifest};
use factgap::graph::TripleSet;
use factgap::harness::experiments::prepare_base;
use factgap::harness::ExperimentConfig;
use factgap::trainer::train;

fn main() -> factgap::Result<()> {
    let config = ExperimentConfig::default();
    let (_, ds, base) = prepare_base(&config, 0)?;
    let half: TripleSet = ds.known.iter().take(20).copied().collect();
    let (tuned, _) = train(&base, &half, &config.train.to_train_config(&half, 0))?;

    let all: TripleSet = ds.labeled_triples().into();
    let before = partition_dataset(&base, &all, &config.probe)?;
    let after = partition_dataset(&tuned, &all, &config.probe)?;
    println!(
        "base model:  {} known / {} unknown",
        before.known.len(),
        before.unknown.len()
    );
    println!(
        "tuned model: {} known / {} unknown",
        after.known.len(),
        after.unknown.len()
    );
    if let Some(w) = &after.warning {
        println!("warning: {w}");
    }
    write_manifest(std::io::stdout().lock(), &all[..5], &after.labels[..5])?;
    Ok(())
}
