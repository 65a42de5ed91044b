use std::sync::Arc;

use super::*;
use crate::dataset::{random_walk_dataset, sample_pools, Dataset};
use crate::index::{IndexConfig, IndexKind};
use crate::search::brute_force_knn_among;

struct Fixture {
    tree: IndexTree,
    records: Vec<TrainingRecord>,
    witnesses: WitnessSet,
}

fn fixture(n: usize, th: usize, k: usize, nw: usize, nr: usize) -> Fixture {
    let ds = Arc::new(random_walk_dataset(n, 64, 11).unwrap());
    let split = sample_pools(n, nw, nr, 5).unwrap();
    let draw = split.draw(nw, nr, 0, 6).unwrap();
    let rest = split.remainder(n);
    let tree = IndexTree::build_subset(ds.clone(), &rest, IndexConfig::new(IndexKind::Isax).with_leaf_threshold(th)).unwrap();
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), ds.series(i).to_vec())).collect::<Vec<_>>();
    let witnesses = WitnessSet::compute(&tree, pick(&draw.witnesses), k, DistanceKind::Euclidean).unwrap();
    let records = collect_training(&tree, &pick(&draw.training), &witnesses, k, DistanceKind::Euclidean).unwrap();
    Fixture {
        tree,
        records,
        witnesses,
    }
}

fn bundle(f: &Fixture, labels: Option<&[u32]>) -> GuaranteeBundle {
    fit_bundle(
        &f.records,
        f.witnesses.clone(),
        IndexFingerprint::of(&f.tree),
        DistanceKind::Euclidean,
        labels,
        &TrainConfig::default(),
    )
    .unwrap()
}

#[test]
fn training_records_match_brute_force() {
    let f = fixture(2000, 40, 5, 20, 30);
    assert_eq!(f.records.len(), 30);
    let ids: Vec<u32> = f.tree.leaves().flat_map(|(_, l)| l.iter().copied()).collect();
    let ds = f.tree.dataset();
    for r in f.records.iter().take(5) {
        let q = ds.series(r.query_id.unwrap());
        let exact = brute_force_knn_among(ds, &ids, q, 5, DistanceKind::Euclidean).unwrap();
        assert_eq!(r.exact, exact);
        assert!(r.leaves_to_exact.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.leaves_to_exact_k() <= r.total_leaves);
    }
}

#[test]
fn single_leaf_tree_makes_every_estimate_exact() {
    let f = fixture(300, 1000, 1, 20, 40);
    assert_eq!(f.tree.leaf_count(), 1);
    for r in &f.records {
        assert_eq!(r.bsf_k_at(1), Some(r.exact_k()));
        assert_eq!(r.leaves_to_exact_k(), 1);
    }
    let b = bundle(&f, None);
    assert_eq!(b.moments, vec![1]);
    let i = b.checkpoints.iter().position(|&c| c == 1).unwrap();
    let lin = b.linear[i].as_ref().unwrap();
    assert!((lin.coefficients[0] - 1.0).abs() < 1e-6);
    assert_eq!(b.exact_probability[i], ProbabilityModel::Pinned { probability: 1.0 });
    for r in &f.records {
        let bsf = r.exact_k();
        let e = b.estimate_distance(EstimationMethod::Linear, 0.05, 1, Some(bsf), None).unwrap();
        assert!((e.point - bsf).abs() < 1e-6 * bsf && (e.lower - bsf).abs() < 1e-6 * bsf);
        assert_eq!(e.upper, bsf);
        assert_eq!(b.exact_probability(1, bsf), Some(1.0));
    }
    let tb = b.time_bound(0.05).unwrap();
    assert_eq!(tb.leaves(3.0), 1);
}

#[test]
fn estimates_respect_their_bounds() {
    let f = fixture(4000, 40, 3, 30, 60);
    let b = bundle(&f, None);
    assert_eq!(b.checkpoints.len(), b.linear.len());
    assert!(b.kde3.is_some());
    for r in &f.records {
        for &t in &b.checkpoints {
            let Some(bsf) = r.bsf_k_at(t) else { continue };
            for method in EstimationMethod::ALL {
                let Ok(e) = b.estimate_distance(method, 0.05, t, Some(bsf), Some(r.witness_distance)) else {
                    continue;
                };
                assert!(e.lower > 0.0, "{method}");
                assert!(e.lower <= e.point && e.point <= e.upper, "{method}: {e:?}");
                assert!(e.upper <= bsf, "{method}");
                assert!(bsf / e.lower - 1.0 >= 0.0);
            }
            if let Some(p) = b.exact_probability(t, bsf) {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }
    assert!(b
        .estimate_distance(EstimationMethod::Kde2, 0.05, 1, None, None)
        .is_err());
    assert!(b
        .estimate_distance(EstimationMethod::Kde2, 1.5, 1, Some(1.0), None)
        .is_err());
}

#[test]
fn witness_model_passes_through_the_means() {
    let f = fixture(3000, 40, 1, 30, 50);
    let b = bundle(&f, None);
    let m = b.witness_model.as_ref().unwrap();
    let n = f.records.len() as f64;
    let xbar = f.records.iter().map(|r| r.witness_distance).sum::<f64>() / n;
    let ybar = f.records.iter().map(|r| r.exact_k()).sum::<f64>() / n;
    assert!((m.predict(&[xbar]) - ybar).abs() < 1e-9 * ybar.max(1.0));
}

#[test]
fn missing_checkpoints_fall_back_to_earlier_ones() {
    let f = fixture(3000, 40, 1, 20, 40);
    let mut b = bundle(&f, None);
    let second = b.checkpoints[1];
    b.linear[1] = None;
    let bsf = 5.0;
    let e = b.estimate_distance(EstimationMethod::Linear, 0.05, second, Some(bsf), None).unwrap();
    assert_eq!(e.checkpoint, Some(b.checkpoints[0]));
    for m in b.linear.iter_mut() {
        *m = None;
    }
    assert!(matches!(
        b.estimate_distance(EstimationMethod::Linear, 0.05, second, Some(bsf), None),
        Err(Error::MissingModel(_))
    ));
}

#[test]
fn bundle_round_trips_through_json() {
    let f = fixture(2000, 40, 1, 20, 30);
    let labels: Vec<u32> = (0..2000).map(|i| i % 3).collect();
    let b = bundle(&f, Some(&labels));
    assert!(b.class_model.is_some());
    let back = GuaranteeBundle::from_json(&b.to_json().unwrap()).unwrap();
    assert_eq!(back, b);
    let mut wrong = b.clone();
    wrong.format = "other".into();
    assert!(matches!(
        GuaranteeBundle::from_json(&wrong.to_json().unwrap()),
        Err(Error::BundleMismatch(_))
    ));
}

#[test]
fn incompatible_queries_are_rejected() {
    let f = fixture(2000, 40, 1, 20, 30);
    let b = bundle(&f, None);
    b.check_compatible(&f.tree, 1, DistanceKind::Euclidean).unwrap();
    assert!(b.check_compatible(&f.tree, 2, DistanceKind::Euclidean).is_err());
    assert!(b.check_compatible(&f.tree, 1, DistanceKind::Dtw { band: 6 }).is_err());
    let other = IndexTree::build(
        Arc::new(random_walk_dataset(2000, 64, 11).unwrap()),
        IndexConfig::new(IndexKind::Dstree).with_leaf_threshold(40),
    )
    .unwrap();
    assert!(b.check_compatible(&other, 1, DistanceKind::Euclidean).is_err());
}

#[test]
fn class_model_uses_agreement_and_one_hot() {
    let cm = ClassModel {
        class_count: 3,
        one_hot: true,
        per_checkpoint: vec![],
    };
    let bsf: Vec<Neighbor> = (0..5).map(|i| Neighbor { id: i, distance: 1.0 + i as f64 }).collect();
    let labels = [2, 2, 1, 2, 0];
    assert_eq!(cm.features(&bsf, &labels), vec![5.0, 0.5, 0.0, 1.0]);
    let cm1 = ClassModel { one_hot: false, ..cm };
    assert_eq!(cm1.features(&bsf[..1], &labels), vec![1.0]);
}

#[test]
fn empty_training_is_rejected() {
    let ds = Arc::new(Dataset::from_rows(vec![vec![0.0, 1.0, 2.0, 3.0]; 5]).unwrap());
    let tree = IndexTree::build(ds, IndexConfig::new(IndexKind::Dstree).with_segments(2)).unwrap();
    let records: Vec<TrainingRecord> = Vec::new();
    let w = WitnessSet {
        ids: vec![],
        series: vec![],
        knn_distances: vec![],
        k: 1,
    };
    assert!(fit_bundle(
        &records,
        w,
        IndexFingerprint::of(&tree),
        DistanceKind::Euclidean,
        None,
        &TrainConfig::default()
    )
    .is_err());
}
