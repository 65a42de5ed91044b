//! Runs held-out queries under each stopping policy and reports how often the
//! stopped answer was exact and how much of the search was saved.
//!
//! `cargo run --release --example stopping_policies`

use std::sync::Arc;

use pros::dataset::{random_walk_dataset, sample_pools};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, IndexFingerprint, TrainConfig, WitnessSet};
use pros::series::DistanceKind;
use pros::stopping::{run_with_policy, RunOptions, StoppingPolicy};

fn main() -> pros::Result<()> {
    let n = 30_000;
    let data = Arc::new(random_walk_dataset(n, 64, 21)?);
    let pools = sample_pools(n, 200, 500, 4)?;
    let tree = IndexTree::build_subset(data.clone(), &pools.remainder(n), IndexConfig::new(IndexKind::Dstree))?;
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), data.series(i).to_vec())).collect::<Vec<_>>();
    let distance = DistanceKind::Euclidean;
    let (train, test) = pools.query_pool.split_at(300);
    let witnesses = WitnessSet::compute(&tree, pick(&pools.witness_pool), 1, distance)?;
    let records = collect_training(&tree, &pick(train), &witnesses, 1, distance)?;
    let config = TrainConfig {
        kde_bandwidth_scale: pros::bench::DESK_BANDWIDTH_SCALE,
        ..TrainConfig::default()
    };
    let bundle = fit_bundle(&records, witnesses, IndexFingerprint::of(&tree), distance, None, &config)?;

    let options = RunOptions {
        audit: true,
        ..RunOptions::default()
    };
    for spec in ["none", "time:0.05", "prob:0.05", "prob:0.01", "error:0.05:0.05:kde2", "error:0.05:0.05:linear"] {
        let policy: StoppingPolicy = spec.parse()?;
        let mut exact = 0;
        let mut visited = 0;
        let mut total = 0;
        for &id in test {
            let o = run_with_policy(&tree, &bundle, data.series(id), &policy, &options)?;
            exact += usize::from(o.answer_exact == Some(true));
            visited += o.leaves_visited;
            total += o.total_leaves.unwrap();
        }
        println!(
            "{spec:<24} exact {:.3}  leaves saved {:.3}",
            exact as f64 / test.len() as f64,
            1.0 - visited as f64 / total as f64
        );
    }
    Ok(())
}
