//! Watches the best-so-far answer of a k-NN search improve leaf by leaf and
//! compares the final answer with a full scan.
//!
//! `cargo run --release --example progressive_search`

use std::ops::ControlFlow;
use std::sync::Arc;

use pros::dataset::{random_walk_dataset, random_walk_values};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::search::{brute_force_knn, progressive_knn, SearchConfig};
use pros::series::DistanceKind;

fn main() -> pros::Result<()> {
    let data = Arc::new(random_walk_dataset(50_000, 64, 5)?);
    let tree = IndexTree::build(data.clone(), IndexConfig::new(IndexKind::Dstree))?;
    let query = random_walk_values(64, 99, 0);
    let config = SearchConfig::new(10, DistanceKind::Euclidean).with_checkpoints(vec![1, 2, 4, 8, 16, 32, 64, 128, 256]);
    let trace = progressive_knn(&tree, &query, &config, |e| {
        println!("leaf {:>4}: 1st {:.4}  10th {:.4}", e.leaves_visited, e.bsf_distances[0], e.bsf_k());
        ControlFlow::Continue(())
    })?;
    println!(
        "exact after {} of {} leaves ({} leaves in the index)",
        trace.leaves_to_exact.as_ref().unwrap()[9],
        trace.total_leaves,
        tree.leaf_count()
    );
    assert_eq!(trace.answer, brute_force_knn(&data, &query, 10, DistanceKind::Euclidean)?);
    println!("final answer equals the full scan");
    Ok(())
}
