//! Runs the base model on a query and prints attention and top predictions.

use std::sync::Arc;

use factgap::transformer::BaseInit;
use factgap::{forward, generate_clustered_space, predict_next, ClusterSpec, ModelParams, Token};

fn main() -> factgap::Result<()> {
    let spec = ClusterSpec::uniform(64, 6, 5, 0.15, 1.0);
    let space = Arc::new(generate_clustered_space(&spec, 32, 0.4, 1)?);
    let params = ModelParams::base(space, &BaseInit::default(), 1);

    let seq = [Token(50), Token(3), Token(63)];
    let trace = forward(&params, &seq);
    for (t, a) in seq.iter().zip(&trace.attention) {
        println!("attend {t:>3}: {a:.4}");
    }
    let mut ranked: Vec<(usize, f64)> = trace.probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (t, p) in ranked.iter().take(5) {
        println!("p({t:>3}) = {p:.4}");
    }
    println!("prediction: {}", predict_next(&params, &seq));
    Ok(())
}
