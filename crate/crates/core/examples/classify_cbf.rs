//! k-NN classification of CBF series, stopped once the current majority
//! class is the exact one with high probability.
//!
//! `cargo run --release --example classify_cbf`

use std::sync::Arc;

use pros::classify::classify_progressive;
use pros::dataset::{cbf_dataset, sample_pools};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, IndexFingerprint, TrainConfig, WitnessSet};
use pros::series::DistanceKind;
use pros::stopping::StoppingPolicy;

fn main() -> pros::Result<()> {
    let n = 20_000;
    let data = Arc::new(cbf_dataset(n, 128, 3.0, &[1.0 / 3.0; 3], 6)?);
    let labels = data.labels().unwrap();
    let pools = sample_pools(n, 100, 500, 9)?;
    let tree = IndexTree::build_subset(data.clone(), &pools.remainder(n), IndexConfig::new(IndexKind::Isax))?;
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), data.series(i).to_vec())).collect::<Vec<_>>();
    let (k, distance) = (10, DistanceKind::Euclidean);
    let (train, test) = pools.query_pool.split_at(300);
    let witnesses = WitnessSet::compute(&tree, pick(&pools.witness_pool), k, distance)?;
    let records = collect_training(&tree, &pick(train), &witnesses, k, distance)?;
    let bundle = fit_bundle(
        &records,
        witnesses,
        IndexFingerprint::of(&tree),
        distance,
        Some(labels),
        &TrainConfig::default(),
    )?;

    for spec in ["none", "class:0.05", "class:0.01"] {
        let policy: StoppingPolicy = spec.parse()?;
        let (mut correct, mut exact_class, mut saved) = (0, 0, 0.0);
        for &id in test {
            let c = classify_progressive(&tree, &bundle, data.series(id), &policy, labels, Some(labels[id as usize]), true)?;
            correct += usize::from(c.is_correct() == Some(true));
            exact_class += usize::from(c.is_exact_class() == Some(true));
            saved += c.savings.unwrap();
        }
        let m = test.len() as f64;
        println!(
            "{spec:<11} accuracy {:.3}  same class as the exact answer {:.3}  leaves saved {:.3}",
            correct as f64 / m,
            exact_class as f64 / m,
            saved / m
        );
    }
    Ok(())
}
