//! Distance estimates for one held-out query as its search progresses: each
//! estimator's point estimate and bound next to the true k-th distance.
//!
//! `cargo run --release --example estimate_distance`

use std::ops::ControlFlow;
use std::sync::Arc;

use pros::dataset::{random_walk_dataset, sample_pools};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, EstimationMethod, IndexFingerprint, TrainConfig, WitnessSet};
use pros::search::{progressive_knn, SearchConfig, DEFAULT_CHECKPOINTS};
use pros::series::DistanceKind;

fn main() -> pros::Result<()> {
    let n = 30_000;
    let data = Arc::new(random_walk_dataset(n, 64, 21)?);
    let pools = sample_pools(n, 200, 301, 4)?;
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

    let query = data.series(test[0]);
    let dw = bundle.weighted_witness_distance(query)?;
    let search = SearchConfig::new(1, distance).with_checkpoints(DEFAULT_CHECKPOINTS.to_vec());
    let trace = progressive_knn(&tree, query, &search, |_| ControlFlow::Continue(()))?;
    let exact = trace.answer[0].distance;
    println!("exact 1-NN distance {exact:.4}; weighted witness distance {dw:.4}");
    let theta = 0.05;
    for method in [EstimationMethod::Baseline, EstimationMethod::Witness] {
        let e = bundle.estimate_distance(method, theta, 0, None, Some(dw))?;
        println!("before searching, {method:<8} {:.4} in [{:.4}, {:.4}]", e.point, e.lower, e.upper);
    }
    for event in &trace.events {
        let t = event.leaves_visited;
        let bsf = event.bsf_k();
        print!("leaf {t:>4}: bsf {bsf:.4}");
        for method in [EstimationMethod::Linear, EstimationMethod::Kde2, EstimationMethod::Kde3] {
            match bundle.estimate_distance(method, theta, t, Some(bsf), None) {
                Ok(e) => print!("  {method} {:.4} (>= {:.4})", e.point, e.lower),
                Err(_) => print!("  {method} -"),
            }
        }
        let p = bundle.exact_probability(t, bsf).unwrap_or(f64::NAN);
        println!("  p_exact {p:.3}");
    }
    Ok(())
}
