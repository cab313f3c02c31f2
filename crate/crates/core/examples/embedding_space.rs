//! Generates a clustered space and prints its neighbourhood structure.

use factgap::{generate_clustered_space, ClusterSpec, Token};

fn main() -> factgap::Result<()> {
    let spec = ClusterSpec::uniform(40, 4, 5, 0.15, 1.0);
    let space = generate_clustered_space(&spec, 16, 0.4, 7)?;
    println!(
        "{} tokens in R^{}, eps = {}, tau = {:.3}",
        space.vocab_size(),
        space.dim(),
        space.epsilon(),
        space.tau()
    );
    println!(
        "similarity edges (ordered): {}",
        space.similarity_edge_count()
    );
    let multi: Vec<_> = space
        .components()
        .into_iter()
        .filter(|c| c.len() > 1)
        .collect();
    println!("multi-token components: {multi:?}");
    let t = Token(2);
    println!("N({t}) = {:?}", space.epsilon_neighborhood(t));
    println!("cos({t}, 3) = {:.4}", space.cosine(t, Token(3))?);
    println!("cos({t}, 30) = {:.4}", space.cosine(t, Token(30))?);
    Ok(())
}
