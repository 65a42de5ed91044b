use std::ops::ControlFlow;
use std::sync::Arc;

use pros::classify::classify_progressive;
use pros::dataset::{cbf_dataset, random_walk_dataset, sample_pools, Dataset};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, GuaranteeBundle, IndexFingerprint, TrainConfig, TrainingRecord, WitnessSet};
use pros::search::StopSignal;
use pros::series::DistanceKind;
use pros::stopping::{replay, run_with_policy, run_with_policy_observed, RunOptions, StopReason, StoppingPolicy};

struct Setup {
    tree: IndexTree,
    bundle: GuaranteeBundle,
    tests: Vec<(u32, Vec<f64>)>,
    records: Vec<TrainingRecord>,
}

fn setup(ds: Dataset, kind: IndexKind, k: usize) -> Setup {
    let n = ds.n();
    let ds = Arc::new(ds);
    let split = sample_pools(n, 40, 140, 1).unwrap();
    let draw = split.draw(40, 100, 40, 2).unwrap();
    let tree = IndexTree::build_subset(ds.clone(), &split.remainder(n), IndexConfig::new(kind).with_leaf_threshold(40)).unwrap();
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), ds.series(i).to_vec())).collect::<Vec<_>>();
    let witnesses = WitnessSet::compute(&tree, pick(&draw.witnesses), k, DistanceKind::Euclidean).unwrap();
    let training = collect_training(&tree, &pick(&draw.training), &witnesses, k, DistanceKind::Euclidean).unwrap();
    let labels = ds.labels();
    let bundle = fit_bundle(
        &training,
        witnesses.clone(),
        IndexFingerprint::of(&tree),
        DistanceKind::Euclidean,
        labels,
        &TrainConfig::default(),
    )
    .unwrap();
    let tests: Vec<(u32, Vec<f64>)> = draw.testing.iter().map(|&i| (i, ds.series(i).to_vec())).collect();
    let records = collect_training(
        &tree,
        &tests.iter().map(|(i, q)| (Some(*i), q.clone())).collect::<Vec<_>>(),
        &witnesses,
        k,
        DistanceKind::Euclidean,
    )
    .unwrap();
    Setup {
        tree,
        bundle,
        tests,
        records,
    }
}

const POLICIES: [&str; 7] = [
    "none",
    "time:0.05",
    "prob:0.05",
    "error:0.05:0.05",
    "error:0.02:0.05:linear",
    "error:0.1:0.05:kde3",
    "error:0.1:0.05:witness",
];

#[test]
fn live_runs_match_replays() {
    for kind in [IndexKind::Isax, IndexKind::Dstree] {
        let s = setup(random_walk_dataset(6000, 64, 3).unwrap(), kind, 5);
        let options = RunOptions {
            audit: true,
            ..RunOptions::default()
        };
        let mut stopped = 0;
        for p in POLICIES {
            let policy: StoppingPolicy = p.parse().unwrap();
            for ((_, q), rec) in s.tests.iter().zip(&s.records) {
                let live = run_with_policy(&s.tree, &s.bundle, q, &policy, &options).unwrap();
                let rep = replay(rec, &s.bundle, &policy, None).unwrap();
                assert_eq!(live, rep, "{kind} {p}");
                stopped += usize::from(live.stopped_at.is_some());
            }
        }
        assert!(stopped > 0, "{kind}: no policy ever stopped");
    }
}

#[test]
fn outcomes_obey_accounting_and_schedule() {
    let s = setup(random_walk_dataset(6000, 64, 4).unwrap(), IndexKind::Isax, 3);
    for p in POLICIES {
        let policy: StoppingPolicy = p.parse().unwrap();
        for rec in &s.records {
            let o = replay(rec, &s.bundle, &policy, None).unwrap();
            let total = o.total_leaves.unwrap();
            assert_eq!(total, rec.total_leaves);
            let savings = o.savings.unwrap();
            match o.stopped_at {
                Some(t) => {
                    assert!(t < total);
                    assert_eq!(o.leaves_visited, t);
                    assert!((savings * total as f64 - (total - t) as f64).abs() < 1e-9);
                }
                None => {
                    assert_eq!(savings, 0.0);
                    assert_eq!(o.answer_exact, Some(true));
                    assert_eq!(o.answer, rec.exact);
                }
            }
            for d in &o.decisions {
                match policy {
                    StoppingPolicy::TimeBound { .. } => {
                        let b = o.time_budget.unwrap();
                        assert_eq!(d.leaves_visited, b.max(rec.first_approximate().0));
                    }
                    StoppingPolicy::None => panic!("policy none decided"),
                    _ => assert!(s.bundle.moments.contains(&d.leaves_visited)),
                }
            }
            assert!(o.decisions.iter().rev().skip(1).all(|d| !d.stop));
            if let Some(StopReason::DistanceError { bound, .. }) = o.reason {
                let StoppingPolicy::DistanceError { epsilon, .. } = policy else { unreachable!() };
                assert!(bound < epsilon);
            }
            if let Some(StopReason::Probability { probability }) = o.reason {
                assert!(probability >= 0.95);
            }
            if o.answer_exact == Some(true) {
                assert_eq!(o.family_error, Some(0.0));
            }
        }
    }
}

#[test]
fn policy_none_returns_the_exact_answer() {
    let s = setup(random_walk_dataset(4000, 64, 5).unwrap(), IndexKind::Dstree, 4);
    for ((_, q), rec) in s.tests.iter().zip(&s.records) {
        let o = run_with_policy(&s.tree, &s.bundle, q, &StoppingPolicy::None, &RunOptions::default()).unwrap();
        assert_eq!(o.answer, rec.exact);
        assert_eq!(o.savings, Some(0.0));
        assert_eq!(o.stopped_at, None);
        assert!(o.decisions.is_empty());
    }
}

#[test]
fn class_policy_and_classification() {
    let ds = cbf_dataset(6000, 64, 3.0, &[1.0 / 3.0; 3], 8).unwrap();
    let labels = ds.labels().unwrap().to_vec();
    let s = setup(ds, IndexKind::Isax, 7);
    let policy: StoppingPolicy = "class:0.05".parse().unwrap();
    let options = RunOptions {
        audit: true,
        labels: Some(&labels),
        ..RunOptions::default()
    };
    for ((id, q), rec) in s.tests.iter().zip(&s.records) {
        let live = run_with_policy(&s.tree, &s.bundle, q, &policy, &options).unwrap();
        let rep = replay(rec, &s.bundle, &policy, Some(&labels)).unwrap();
        assert_eq!(live, rep);
        if live.answer_exact == Some(true) {
            assert_eq!(live.was_exact_class, Some(true));
        }
        let exact = classify_progressive(&s.tree, &s.bundle, q, &StoppingPolicy::None, &labels, Some(labels[*id as usize]), false).unwrap();
        assert_eq!(exact.is_exact_class(), Some(true));
        assert_eq!(Some(exact.predicted), live.exact_class);
    }
    assert!(run_with_policy(&s.tree, &s.bundle, &s.tests[0].1, &policy, &RunOptions::default()).is_err());
}

#[test]
fn stop_signal_and_observer_end_the_search() {
    let s = setup(random_walk_dataset(6000, 64, 6).unwrap(), IndexKind::Isax, 1);
    let q = &s.tests[0].1;
    let stop = StopSignal::new();
    stop.stop();
    let options = RunOptions {
        stop: Some(stop),
        ..RunOptions::default()
    };
    let o = run_with_policy(&s.tree, &s.bundle, q, &StoppingPolicy::None, &options).unwrap();
    assert_eq!(o.stopped_at, Some(1));
    assert_eq!(o.reason, Some(StopReason::User));
    assert_eq!(o.savings, None);

    let mut seen = Vec::new();
    let o = run_with_policy_observed(&s.tree, &s.bundle, q, &StoppingPolicy::None, &RunOptions::default(), |e| {
        seen.push(e.event.leaves_visited);
        ControlFlow::Break(())
    })
    .unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(o.stopped_at.is_some(), o.reason == Some(StopReason::User));
}
