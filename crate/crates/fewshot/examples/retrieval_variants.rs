//! Compare retrieval variants on a toy corpus.
//!
//! Three near-duplicate Python questions, one Rust, one JS. Pure
//! relevance returns the redundant Python trio; adding diversity swaps
//! the duplicates for the other languages; the quality bias pulls the
//! well-modeled demonstration up the ranking.
//!
//! Run: `cargo run --example retrieval_variants`

use std::sync::Arc;

use fewshot::{mmr_select, CandidateIndex, Embedding};

fn unit(v: &[f64]) -> Arc<Embedding> {
    Arc::new(Embedding::new(v.to_vec()).unwrap().normalize().unwrap())
}

fn main() {
    let names = [
        "python_async_await",
        "python_asyncio_guide",
        "python_coroutines",
        "rust_async_await",
        "javascript_promises",
    ];
    let embeddings = vec![
        unit(&[0.95, 0.05, 0.00]),
        unit(&[0.93, 0.07, 0.00]),
        unit(&[0.90, 0.10, 0.00]),
        unit(&[0.10, 0.90, 0.10]),
        unit(&[0.05, 0.10, 0.90]),
    ];
    // mean answer token log-probabilities; higher = better modeled
    let biases = vec![-1.2, -4.0, -3.5, -1.5, -2.0];
    let index = CandidateIndex::new(
        names.iter().map(|n| n.to_string()).collect(),
        embeddings,
        biases,
    )
    .unwrap();
    let query = Embedding::new(vec![1.0, 0.05, 0.02]).unwrap();

    for (label, lambda_d, lambda_b) in [
        ("pure relevance         (d=1.00, b=1.00)", 1.0, 1.0),
        ("with diversity         (d=0.50, b=1.00)", 0.5, 1.0),
        ("with quality bias      (d=1.00, b=0.75)", 1.0, 0.75),
        ("diversity + bias       (d=0.50, b=0.75)", 0.5, 0.75),
    ] {
        let ctx = mmr_select(&index, &query, 3, lambda_d, lambda_b).unwrap();
        println!("{label}:");
        for (id, score) in ctx.ids.iter().zip(&ctx.scores) {
            println!("  {id:22} {score:+.4}");
        }
        println!();
    }
}
