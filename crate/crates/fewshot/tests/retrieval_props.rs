//! Property tests for the greedy selection: agreement with an independent
//! brute-force oracle, determinism, distinctness, tie-break behavior, and
//! the diversity tendency.

mod common;

use common::{greedy_oracle, mean_pairwise_dot, random_instance, top_k_cosine_oracle, Instance};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fewshot::mmr_select;

const LAMBDAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

proptest! {
    #[test]
    fn matches_bruteforce_oracle(
        seed in any::<u64>(),
        n in 1usize..=12,
        d in 1usize..=8,
        k in 1usize..=6,
        ld_idx in 0usize..5,
        lb_idx in 0usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, d);
        let lambda_d = LAMBDAS[ld_idx];
        let lambda_b = LAMBDAS[lb_idx];
        let got = mmr_select(&inst.index(), &inst.query_embedding(), k, lambda_d, lambda_b).unwrap();
        let want = greedy_oracle(&inst.query, &inst.embeddings, &inst.biases, k, lambda_d, lambda_b);
        prop_assert_eq!(got.ids, Instance::ids_for(&want));
    }

    #[test]
    fn deterministic_and_distinct(
        seed in any::<u64>(),
        n in 1usize..=20,
        k in 1usize..=8,
        ld_idx in 0usize..5,
        lb_idx in 0usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 6);
        let index = inst.index();
        let q = inst.query_embedding();
        let a = mmr_select(&index, &q, k, LAMBDAS[ld_idx], LAMBDAS[lb_idx]).unwrap();
        let b = mmr_select(&index, &q, k, LAMBDAS[ld_idx], LAMBDAS[lb_idx]).unwrap();
        prop_assert_eq!(&a.ids, &b.ids);
        prop_assert_eq!(&a.scores, &b.scores);
        prop_assert_eq!(a.ids.len(), k.min(n));
        let unique: std::collections::HashSet<_> = a.ids.iter().collect();
        prop_assert_eq!(unique.len(), a.ids.len());
    }

    #[test]
    fn first_pick_independent_of_lambda_d(
        seed in any::<u64>(),
        n in 1usize..=15,
        lb_idx in 0usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 5);
        let index = inst.index();
        let q = inst.query_embedding();
        let firsts: std::collections::HashSet<String> = LAMBDAS
            .iter()
            .map(|&ld| mmr_select(&index, &q, 3, ld, LAMBDAS[lb_idx]).unwrap().ids[0].clone())
            .collect();
        prop_assert_eq!(firsts.len(), 1);
    }

    #[test]
    fn permutation_equivariant(
        seed in any::<u64>(),
        n in 2usize..=12,
        k in 1usize..=6,
        ld_idx in 0usize..5,
    ) {
        // generic random instances have no score ties, so permuting the
        // candidate order must permute the selected ids identically
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 6);
        let base = mmr_select(&inst.index(), &inst.query_embedding(), k, LAMBDAS[ld_idx], 0.75)
            .unwrap();

        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted = Instance {
            query: inst.query.clone(),
            embeddings: perm.iter().map(|&i| inst.embeddings[i].clone()).collect(),
            biases: perm.iter().map(|&i| inst.biases[i]).collect(),
        };
        // candidate originally at position perm[j] now sits at j; carry ids over
        let ids: Vec<String> = perm.iter().map(|&i| format!("c{i}")).collect();
        let embeddings = permuted
            .embeddings
            .iter()
            .map(|e| std::sync::Arc::new(fewshot::Embedding::new(e.clone()).unwrap()))
            .collect();
        let index =
            fewshot::CandidateIndex::new(ids, embeddings, permuted.biases.clone()).unwrap();
        let shuffled = mmr_select(&index, &inst.query_embedding(), k, LAMBDAS[ld_idx], 0.75)
            .unwrap();
        prop_assert_eq!(base.ids, shuffled.ids);
    }
}

#[test]
fn knn_reduction_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        use rand::Rng;
        let n = rng.gen_range(1..=30);
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=8);
        let inst = random_instance(&mut rng, n, d);
        let got = mmr_select(&inst.index(), &inst.query_embedding(), k, 1.0, 1.0).unwrap();
        let want = top_k_cosine_oracle(&inst.query, &inst.embeddings, k);
        assert_eq!(got.ids, Instance::ids_for(&want));
    }
}

#[test]
fn diversity_tendency_over_seeded_instances() {
    // mean pairwise similarity of the selected set: pure-diversity
    // selections must sit strictly below pure-relevance selections
    let mut sum_low = 0.0;
    let mut sum_high = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 50, 8);
        let index = inst.index();
        let q = inst.query_embedding();
        let at = |ld: f64| {
            let ctx = mmr_select(&index, &q, 6, ld, 1.0).unwrap();
            let positions: Vec<usize> = ctx
                .ids
                .iter()
                .map(|id| id[1..].parse::<usize>().unwrap())
                .collect();
            mean_pairwise_dot(&inst.embeddings, &positions)
        };
        sum_low += at(0.0);
        sum_high += at(1.0);
    }
    assert!(
        sum_low / 100.0 < sum_high / 100.0,
        "mean pairwise similarity at lambda_d=0 ({}) should be below lambda_d=1 ({})",
        sum_low / 100.0,
        sum_high / 100.0
    );
}
