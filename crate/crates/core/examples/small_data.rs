//! Retrains the known arm on a small fraction of its facts and compares.

use factgap::harness::{prepare, ExperimentConfig};

fn main() -> factgap::Result<()> {
    let config = ExperimentConfig::default();
    let prepared = prepare(&config, 0)?;
    let rep = prepared.small_data(0.25)?;
    println!("{} of {} facts", rep.n_subset, rep.n_full);
    println!(
        "bare accuracy {:.2} -> {:.2}, prompted {:.2} -> {:.2}",
        rep.full.acc_kn.unwrap_or(f64::NAN),
        rep.subset.acc_kn.unwrap_or(f64::NAN),
        rep.full.acc_kn_star.unwrap_or(f64::NAN),
        rep.subset.acc_kn_star.unwrap_or(f64::NAN)
    );
    println!(
        "coverage delta full {:.3}, subset {:.3}",
        rep.full.delta, rep.subset.delta
    );
    Ok(())
}
