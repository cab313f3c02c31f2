mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use factgap::classifier::{classify_exhaustive, classify_triple, sample_contexts, ProbeConfig};
use factgap::embedding::{generate_clustered_space, ClusterSpec, EmbeddingSpace, Token};
use factgap::graph::{coverage, union, Edge, KnowledgeTriple, RelationGraph};
use factgap::icl::{augmented_gap, cot_subgraph, CoTChain};
use factgap::rng::rng_from_seed;
use factgap::transformer::{forward, predict_next, ModelParams};
use factgap::GapReport;

use common::{oracle_argmax, oracle_forward, oracle_neighbors, plain_space};

fn clustered(seed: u64, sizes: Vec<usize>, dim: usize) -> EmbeddingSpace {
    let spec = ClusterSpec {
        vocab_size: 24,
        cluster_sizes: sizes,
        intra_radius: 0.15,
        center_min_separation: 1.0,
    };
    generate_clustered_space(&spec, dim, 0.4, seed).unwrap()
}

fn graph_on(
    space: &Arc<EmbeddingSpace>,
    rel: Token,
    nodes: usize,
    edges: BTreeSet<Edge>,
) -> RelationGraph {
    RelationGraph::new(
        space.clone(),
        Some(rel),
        (0..nodes).map(Token).collect(),
        edges,
    )
    .unwrap()
}

fn edge_set(n: usize) -> impl Strategy<Value = BTreeSet<Edge>> {
    prop::collection::btree_set((0..n, 0..n), 0..n * 2).prop_map(|s| {
        s.into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (Token(a), Token(b)))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_distance_matches_cosine(seed in any::<u64>(), dim in 6usize..12) {
        let space = clustered(seed, vec![3, 2], dim);
        for a in space.tokens() {
            for b in space.tokens() {
                let d = space.distance(a, b);
                let c = space.cosine(a, b).unwrap();
                prop_assert!((d * d - (2.0 - 2.0 * c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neighbourhoods_are_symmetric_and_match_a_scan(seed in any::<u64>()) {
        let space = clustered(seed, vec![4, 3, 2], 8);
        for t in space.tokens() {
            let nb = space.epsilon_neighborhood(t);
            prop_assert_eq!(&nb, &oracle_neighbors(&space, t));
            for u in &nb {
                prop_assert!(space.epsilon_neighborhood(*u).contains(&t));
            }
        }
    }

    #[test]
    fn space_generation_is_deterministic(seed in any::<u64>()) {
        let a = clustered(seed, vec![3, 3], 6);
        let b = clustered(seed, vec![3, 3], 6);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attention_follows_a_permutation_of_the_context(
        seed in any::<u64>(),
        ids in prop::collection::vec(0usize..10, 2..7),
        shuffle_seed in any::<u64>(),
    ) {
        let space = plain_space(10, 5, seed);
        let params = ModelParams::random(space, 0.7, seed ^ 1);
        let last = *ids.last().unwrap();
        let mut perm: Vec<usize> = (0..ids.len() - 1).collect();
        perm.shuffle(&mut rng_from_seed(shuffle_seed));
        let seq: Vec<Token> = ids.iter().map(|&i| Token(i)).collect();
        let mut permuted: Vec<Token> = perm.iter().map(|&i| seq[i]).collect();
        permuted.push(Token(last));

        let f = forward(&params, &seq);
        let g = forward(&params, &permuted);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((g.attention[j] - f.attention[i]).abs() < 1e-12);
        }
        let n = seq.len() - 1;
        prop_assert!((g.attention[n] - f.attention[n]).abs() < 1e-12);
        for (x, y) in f.logits.iter().zip(&g.logits) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn prediction_is_pure(seed in any::<u64>(), ids in prop::collection::vec(0usize..10, 1..6)) {
        let params = ModelParams::random(plain_space(10, 4, seed), 1.0, seed);
        let seq: Vec<Token> = ids.into_iter().map(Token).collect();
        let first = predict_next(&params, &seq);
        let again = predict_next(&params, &seq);
        prop_assert_eq!(first, again);
        prop_assert_eq!(first, oracle_argmax(&oracle_forward(&params, &seq).logits));
    }

    #[test]
    fn union_obeys_inclusion_exclusion(e1 in edge_set(9), e2 in edge_set(9)) {
        let space = plain_space(10, 3, 0);
        let r = Token(9);
        let g1 = graph_on(&space, r, 9, e1.clone());
        let g2 = graph_on(&space, r, 9, e2.clone());
        let u = union(&g1, &g2).unwrap();
        let both = e1.intersection(&e2).count();
        prop_assert_eq!(u.edge_count(), e1.len() + e2.len() - both);
        prop_assert_eq!(&u, &union(&g2, &g1).unwrap());
        prop_assert_eq!(&union(&g1, &g1).unwrap(), &g1);
    }

    #[test]
    fn star_gap_never_exceeds_gap_when_unknown_coverage_is_dominated(
        e_kn in edge_set(9),
        keep in prop::collection::vec(any::<bool>(), 18),
        p in edge_set(9),
        tests in prop::collection::vec((0usize..9, 0usize..9), 1..15),
    ) {
        let space = plain_space(10, 3, 0);
        let r = Token(9);
        let e_unk: BTreeSet<Edge> = e_kn.iter().zip(keep.iter().cycle()).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
        let g_kn = graph_on(&space, r, 9, e_kn);
        let g_unk = graph_on(&space, r, 9, e_unk);
        let pg = graph_on(&space, r, 9, p);
        let test: Vec<KnowledgeTriple> = tests
            .into_iter()
            .filter(|(s, a)| s != a)
            .map(|(s, a)| KnowledgeTriple::new(Token(s), r, Token(a)).unwrap())
            .collect();
        prop_assume!(!test.is_empty());
        let rep = augmented_gap(&g_kn, &g_unk, &pg, &test).unwrap();
        prop_assert!(rep.delta_star.unwrap() <= rep.delta + 1e-12);
    }

    #[test]
    fn star_gap_matches_per_fact_identity(
        e_kn in edge_set(8),
        e_unk in edge_set(8),
        p in edge_set(8),
        tests in prop::collection::vec((0usize..8, 0usize..8), 1..15),
    ) {
        let space = plain_space(9, 3, 0);
        let r = Token(8);
        let g_kn = graph_on(&space, r, 8, e_kn.clone());
        let g_unk = graph_on(&space, r, 8, e_unk.clone());
        let pg = graph_on(&space, r, 8, p.clone());
        let test: Vec<KnowledgeTriple> = tests
            .into_iter()
            .filter(|(s, a)| s != a)
            .map(|(s, a)| KnowledgeTriple::new(Token(s), r, Token(a)).unwrap())
            .collect();
        prop_assume!(!test.is_empty());
        let rep = augmented_gap(&g_kn, &g_unk, &pg, &test).unwrap();
        let mut sum = 0i64;
        for t in &test {
            let e = t.edge();
            let (k, u, q) = (e_kn.contains(&e), e_unk.contains(&e), p.contains(&e));
            sum += i64::from(k || q) - i64::from(u || q);
        }
        let expected = sum as f64 / test.len() as f64;
        prop_assert!((rep.delta_star.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn chain_ending_in_the_answer_covers_the_fact(
        base in edge_set(8),
        s in 0usize..8,
        mids in prop::collection::vec(0usize..8, 0..3),
        a in 0usize..8,
    ) {
        prop_assume!(s != a && mids.iter().all(|&m| m != s));
        let space = plain_space(10, 3, 0);
        let r = Token(9);
        let aux = Token(8);
        let mut steps: Vec<(Token, Token)> = mids.into_iter().map(|m| (aux, Token(m))).collect();
        steps.push((r, Token(a)));
        let chain = CoTChain::new(Token(s), steps).unwrap();
        let cg = cot_subgraph(&chain, &space).unwrap();
        let g = union(&graph_on(&space, r, 8, base), &cg).unwrap();
        let fact = KnowledgeTriple::new(Token(s), r, Token(a)).unwrap();
        prop_assert_eq!(coverage(&g, &[fact]).unwrap().covered, 1);
    }

    #[test]
    fn embedding_text_roundtrip_is_exact(
        vals in prop::collection::vec(
            prop_oneof![prop::num::f64::NORMAL, prop::num::f64::SUBNORMAL, prop::num::f64::ZERO],
            12..=12,
        ),
        eps in 0.0f64..2.0,
    ) {
        let m = Array2::from_shape_vec((4, 3), vals).unwrap();
        let space = EmbeddingSpace::from_rows(m, eps).unwrap();
        let back = EmbeddingSpace::from_text(&space.to_text()).unwrap();
        prop_assert_eq!(back.embeddings(), space.embeddings());
        prop_assert_eq!(back.epsilon().to_bits(), eps.to_bits());
    }

    #[test]
    fn params_and_graph_text_roundtrip(seed in any::<u64>(), edges in edge_set(10)) {
        let space = Arc::new(clustered(seed, vec![3, 2], 5));
        let params = ModelParams::random(space.clone(), 1.3, seed);
        let back = ModelParams::from_text(&params.to_text(), space.clone()).unwrap();
        prop_assert_eq!(back.w_k(), params.w_k());
        prop_assert_eq!(back.w_q(), params.w_q());
        prop_assert_eq!(back.w_v(), params.w_v());

        let g = graph_on(&space, Token(20), 10, edges);
        let g2 = RelationGraph::from_text(&g.to_text(), space.clone()).unwrap();
        prop_assert_eq!(g2.sim_edges(), g.sim_edges());
        prop_assert_eq!(g2, g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_outputs_are_normalized(
        seed in any::<u64>(),
        scale in 0.01f64..5.0,
        ids in prop::collection::vec(0usize..12, 1..8),
    ) {
        let params = ModelParams::random(plain_space(12, 4, seed), scale, seed);
        let seq: Vec<Token> = ids.into_iter().map(Token).collect();
        let f = forward(&params, &seq);
        prop_assert!(f.attention.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!(f.probs.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((f.attention.sum() - 1.0).abs() < 1e-12);
        prop_assert!((f.probs.sum() - 1.0).abs() < 1e-12);
        prop_assert!(f.logits.iter().all(|x| x.is_finite()));
    }
}

fn probe(num_probes: usize, seed: u64, pool: Option<BTreeSet<Token>>, m: usize) -> ProbeConfig {
    ProbeConfig {
        num_probes,
        context_length: m,
        context_pool: pool,
        seed,
        include_empty_context: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn more_probes_never_lose_a_witness(
        seed in any::<u64>(),
        s in 0usize..5,
        a in 5usize..10,
        k1 in 1usize..8,
        extra in 1usize..8,
    ) {
        let params = ModelParams::random(plain_space(12, 4, seed), 1.5, seed);
        let fact = KnowledgeTriple::new(Token(s), Token(11), Token(a)).unwrap();
        let small = classify_triple(&params, &fact, &probe(k1, seed, None, 3)).unwrap();
        let large = classify_triple(&params, &fact, &probe(k1 + extra, seed, None, 3)).unwrap();
        if small.is_known() {
            prop_assert_eq!(&large, &small);
        }
        for l in [&small, &large] {
            if let Some(w) = &l.witness {
                let mut seq = w.clone();
                seq.extend([fact.subject, fact.relation]);
                prop_assert_eq!(predict_next(&params, &seq), fact.answer);
            }
        }
    }

    #[test]
    fn exhaustive_label_matches_brute_force(seed in any::<u64>(), s in 0usize..4, a in 4usize..8) {
        let params = ModelParams::random(plain_space(9, 4, seed), 2.0, seed);
        let fact = KnowledgeTriple::new(Token(s), Token(8), Token(a)).unwrap();
        let pool: Vec<Token> = (0..8).map(Token).filter(|t| *t != fact.subject && *t != fact.answer).take(3).collect();
        let cfg = probe(200, seed, Some(pool.iter().copied().collect()), 2);

        let mut oracle_known = oracle_argmax(&oracle_forward(&params, &[fact.subject, fact.relation]).logits) == fact.answer;
        let mut all = BTreeSet::new();
        for &x in &pool {
            for &y in &pool {
                all.insert(vec![x, y]);
                let seq = [x, y, fact.subject, fact.relation];
                oracle_known |= oracle_argmax(&oracle_forward(&params, &seq).logits) == fact.answer;
            }
        }
        let exhaustive = classify_exhaustive(&params, &fact, &cfg).unwrap();
        prop_assert_eq!(exhaustive.is_known(), oracle_known);

        let sampled = classify_triple(&params, &fact, &cfg).unwrap();
        if sampled.is_known() {
            prop_assert!(exhaustive.is_known());
        }
        let seen: BTreeSet<Vec<Token>> = sample_contexts(&fact, &cfg, 9).unwrap().into_iter().filter(|c| !c.is_empty()).collect();
        if seen == all {
            prop_assert_eq!(sampled.is_known(), exhaustive.is_known());
        }
    }
}

#[test]
fn star_gap_can_exceed_gap_without_domination() {
    let space = plain_space(4, 3, 0);
    let r = Token(3);
    let e: Edge = (Token(0), Token(1));
    let g_kn = graph_on(&space, r, 3, BTreeSet::new());
    let g_unk = graph_on(&space, r, 3, BTreeSet::from([e]));
    let pg = graph_on(&space, r, 3, BTreeSet::from([e]));
    let test = [KnowledgeTriple::new(Token(0), r, Token(1)).unwrap()];
    let rep = augmented_gap(&g_kn, &g_unk, &pg, &test).unwrap();
    assert_eq!(rep.delta, -1.0);
    assert_eq!(rep.delta_star, Some(0.0));
}

/// Random edge sets of fixed size, placed uniformly among the off-diagonal slots.
fn uniform_graph(
    space: &Arc<EmbeddingSpace>,
    r: Token,
    v: usize,
    m: usize,
    rng: &mut impl Rng,
) -> RelationGraph {
    let slots: Vec<Edge> = (0..v)
        .flat_map(|s| {
            (0..v)
                .filter(move |&a| a != s)
                .map(move |a| (Token(s), Token(a)))
        })
        .collect();
    let edges = slots.choose_multiple(rng, m).copied().collect();
    graph_on(space, r, v, edges)
}

fn test_facts(r: Token, v: usize, n: usize, rng: &mut impl Rng) -> Vec<KnowledgeTriple> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..v);
            let a = (s + rng.random_range(1..v)) % v;
            KnowledgeTriple::new(Token(s), r, Token(a)).unwrap()
        })
        .collect()
}

#[test]
fn uniform_edges_give_proportional_coverage() {
    let (v, m, n, reps) = (30usize, 200usize, 40usize, 1000usize);
    let space = plain_space(v + 1, 3, 0);
    let r = Token(v);
    let mut rng = rng_from_seed(11);
    let test = test_facts(r, v, n, &mut rng);
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            coverage(&uniform_graph(&space, r, v, m, &mut rng), &test)
                .unwrap()
                .covered as f64
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / reps as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let expected = n as f64 * m as f64 / (v * (v - 1)) as f64;
    assert!(
        (mean - expected).abs() < 3.0 * (var / reps as f64).sqrt(),
        "{mean} vs {expected}"
    );
}

#[test]
fn coverage_difference_scales_with_lambda() {
    let (v, m_kn, m_unk, n, reps) = (50usize, 300usize, 100usize, 40usize, 1000usize);
    let space = plain_space(v + 1, 3, 0);
    let r = Token(v);
    let mut rng = rng_from_seed(12);
    let test = test_facts(r, v, n, &mut rng);
    let mut lambda_gap = 0.0;
    let diffs: Vec<f64> = (0..reps)
        .map(|_| {
            let kn = uniform_graph(&space, r, v, m_kn, &mut rng);
            let unk = uniform_graph(&space, r, v, m_unk, &mut rng);
            let rep = GapReport::from_graphs(&kn, &unk, &test).unwrap();
            lambda_gap = rep.edge_gap;
            (rep.covered_kn as f64) - (rep.covered_unk as f64)
        })
        .collect();
    assert!((lambda_gap - n as f64 * (m_kn - m_unk) as f64 / (v * v) as f64).abs() < 1e-12);
    let mean = diffs.iter().sum::<f64>() / reps as f64;
    let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    assert!(
        (mean - lambda_gap).abs() < 3.0 * (var / reps as f64).sqrt(),
        "{mean} vs {lambda_gap}"
    );
}
