//! Compares analytic gradients with central differences on random instances.

use factgap::rng::rng_from_seed;
use factgap::trainer::{finite_difference_gradients, gradients};
use factgap::{generate_clustered_space, ClusterSpec, KnowledgeTriple, ModelParams, Token};
use rand::Rng;
use std::sync::Arc;

fn main() -> factgap::Result<()> {
    let mut rng = rng_from_seed(3);
    for trial in 0..5 {
        let spec = ClusterSpec::uniform(12, 0, 1, 0.0, 0.0);
        let space = Arc::new(generate_clustered_space(&spec, 5, 0.0, trial)?);
        let params = ModelParams::random(space, 0.5, trial);
        let triple = KnowledgeTriple::new(Token(0), Token(11), Token(rng.random_range(1..11)))?;
        let ctx: Vec<Token> = (0..3).map(|_| Token(rng.random_range(0..12))).collect();
        let exact = gradients(&params, &triple, &ctx);
        let approx = finite_difference_gradients(&params, &triple, &ctx, 1e-5);
        println!(
            "trial {trial}: max relative error {:.2e}",
            exact.max_relative_error(&approx, 1e-6)
        );
    }
    Ok(())
}
