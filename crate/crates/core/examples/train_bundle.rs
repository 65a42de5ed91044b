//! Trains a guarantee bundle: witnesses and training queries are held out of
//! the index, every training query is searched to completion, and the
//! estimators are fitted on the recorded traces.
//!
//! `cargo run --release --example train_bundle [bundle.json]`

use std::sync::Arc;

use pros::dataset::{random_walk_dataset, sample_pools};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, IndexFingerprint, TrainConfig, WitnessSet};
use pros::series::DistanceKind;

fn main() -> pros::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("pros-bundle.json").display().to_string());
    let n = 30_000;
    let data = Arc::new(random_walk_dataset(n, 64, 21)?);
    let pools = sample_pools(n, 200, 300, 4)?;
    let tree = IndexTree::build_subset(data.clone(), &pools.remainder(n), IndexConfig::new(IndexKind::Dstree))?;
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), data.series(i).to_vec())).collect::<Vec<_>>();

    let k = 1;
    let distance = DistanceKind::Euclidean;
    let witnesses = WitnessSet::compute(&tree, pick(&pools.witness_pool), k, distance)?;
    let records = collect_training(&tree, &pick(&pools.query_pool), &witnesses, k, distance)?;
    let mut leaves: Vec<u64> = records.iter().map(|r| r.leaves_to_exact_k()).collect();
    leaves.sort_unstable();
    println!(
        "{} training searches over {} leaves; leaves to the exact answer: median {}, max {}",
        records.len(),
        tree.leaf_count(),
        leaves[leaves.len() / 2],
        leaves[leaves.len() - 1]
    );

    let config = TrainConfig {
        kde_bandwidth_scale: pros::bench::DESK_BANDWIDTH_SCALE,
        ..TrainConfig::default()
    };
    let bundle = fit_bundle(&records, witnesses, IndexFingerprint::of(&tree), distance, None, &config)?;
    println!("checkpoints {:?}", bundle.checkpoints);
    println!("decision moments {:?}", bundle.moments);
    if let Some(m) = &bundle.witness_model {
        println!("witness model: exact = {:.3} + {:.3} * dw", m.intercept, m.coefficients[0]);
    }
    for b in &bundle.time_bounds {
        println!("time bound phi={}: log2 leaves = {:.3} + {:.3} * first distance", b.phi, b.model.intercept, b.model.coefficients[0]);
    }
    bundle.save(&out)?;
    println!("saved {out}");
    Ok(())
}
