//! Trains both arms on one seed and reports the coverage gap.

use factgap::harness::{run_gap_experiment, ExperimentConfig};

fn main() -> factgap::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let rep = run_gap_experiment(&ExperimentConfig::default(), seed)?;
    println!(
        "seed {seed}: covered {}/{} (known) vs {}/{} (unknown), delta {:.3}",
        rep.covered_kn, rep.n_test, rep.covered_unk, rep.n_test, rep.delta
    );
    println!(
        "|E_kn| = {}, |E_unk| = {}, lambda * (|E_kn| - |E_unk|) = {:.3}",
        rep.e_kn, rep.e_unk, rep.edge_gap
    );
    Ok(())
}
