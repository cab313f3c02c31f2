//! Coverage gap on test subjects shifted away from the training clusters.

use factgap::harness::{run_ood_decay, ExperimentConfig};

fn main() -> factgap::Result<()> {
    let reps = run_ood_decay(&ExperimentConfig::default(), 0)?;
    println!("target  achieved  delta   bound");
    for r in reps {
        println!(
            "{:<7.2} {:<9.3} {:<7.3} {:.3}",
            r.target_gamma.unwrap_or(f64::NAN),
            r.gamma.unwrap_or(f64::NAN),
            r.delta,
            r.markov_bound.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
