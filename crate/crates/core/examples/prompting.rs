//! Few-shot and chain prompts unioned into both arms' graphs.

use factgap::harness::{run_icl_mitigation, ExperimentConfig};

fn main() -> factgap::Result<()> {
    let rep = run_icl_mitigation(&ExperimentConfig::default(), 0)?;
    let f = &rep.fewshot;
    println!("demos: {:?}", rep.demos);
    println!(
        "few-shot: delta {:.3} -> {:.3}, prompt edges {}",
        f.delta,
        f.delta_star.unwrap_or(f64::NAN),
        f.e_prompt.unwrap_or(0)
    );
    println!(
        "chain:    delta {:.3} -> {:.3}",
        rep.cot.delta,
        rep.cot.delta_star.unwrap_or(f64::NAN)
    );
    println!(
        "prompted accuracy: known {:.2}, unknown {:.2}",
        f.acc_kn_star.unwrap_or(f64::NAN),
        f.acc_unk_star.unwrap_or(f64::NAN)
    );
    Ok(())
}
