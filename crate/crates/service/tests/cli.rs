mod common;

use common::{pros, pros_ok, random_walks};
use pros::dataset::{random_walk_values, DatasetDescriptor};
use pros::index::load_index;
use pros::search::brute_force_knn_among;
use pros::series::DistanceKind;
use pros::stopping::QueryOutcome;
use std::sync::Arc;

fn outcome(stdout: &str) -> QueryOutcome {
    serde_json::from_str(stdout).expect("query prints an outcome")
}

#[test]
fn query_answers_equal_a_full_scan() {
    let f = random_walks();
    let data = Arc::new(DatasetDescriptor::open(&f.dataset).unwrap().load().unwrap());
    let tree = load_index(&f.index, data.clone()).unwrap();
    let indexed = tree.subtree_ids(tree.root());
    assert_eq!(indexed.len(), 3700);
    for seed in 1..=5u64 {
        let seed_arg = seed.to_string();
        let o = outcome(&pros_ok(&f.args(&["query", "--seed", &seed_arg])));
        let q = random_walk_values(64, seed, 0);
        let exact = brute_force_knn_among(&data, &indexed, &q, 1, DistanceKind::Euclidean).unwrap();
        assert_eq!(o.answer, exact);
        assert_eq!(o.savings, Some(0.0));
        assert_eq!(o.stopped_at, None);
    }
    let own = indexed[17];
    let values: Vec<String> = data.series(own).iter().map(|v| v.to_string()).collect();
    let values = values.join(",");
    let o = outcome(&pros_ok(&f.args(&["query", "--values", &values])));
    assert_eq!(o.answer[0].id, own);
    assert!(o.answer[0].distance < 1e-5);
    let own_arg = own.to_string();
    let o = outcome(&pros_ok(&f.args(&["query", "--series", &own_arg, "--policy", "prob:0.05", "--audit"])));
    assert_eq!(o.answer[0].id, own);
    assert!(o.total_leaves.is_some() && o.answer_exact == Some(true));
}

#[test]
fn mismatched_requests_are_bundle_mismatches() {
    let f = random_walks();
    for extra in [["--k", "5"], ["--distance", "dtw:6"]] {
        let mut args = f.args(&["query", "--series", "0"]);
        args.extend_from_slice(&extra);
        let out = pros(&args);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("bundle mismatch"), "{err}");
    }
    let out = pros(&f.args(&["query", "--series", "0", "--seed", "3"]));
    assert!(!out.status.success());
    let out = pros(&f.args(&["query", "--series", "999999"]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not in dataset"));
}

#[test]
fn a_single_leaf_query_is_exact_and_saves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    pros_ok(&["generate", "--n", "400", "--len", "32", "--seed", "4", "--out", &p("small")]);
    pros_ok(&["index", "--dataset", &p("small.json"), "--holdout", "300", "--out", &p("small.idx")]);
    pros_ok(&[
        "train",
        "--dataset",
        &p("small.json"),
        "--index",
        &p("small.idx"),
        "--witnesses",
        "60",
        "--training",
        "200",
        "--out",
        &p("b.json"),
    ]);
    for policy in ["none", "prob:0.05", "time:0.05", "error:0.05:0.05"] {
        let o = outcome(&pros_ok(&[
            "query",
            "--dataset",
            &p("small.json"),
            "--index",
            &p("small.idx"),
            "--bundle",
            &p("b.json"),
            "--seed",
            "9",
            "--policy",
            policy,
            "--audit",
        ]));
        assert_eq!(o.leaves_visited, 1, "{policy}");
        assert_eq!(o.total_leaves, Some(1));
        assert_eq!(o.savings, Some(0.0));
        assert_eq!(o.answer_exact, Some(true));
    }
}

#[test]
fn training_needs_held_out_series() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    pros_ok(&["generate", "--n", "500", "--len", "32", "--out", &p("d")]);
    pros_ok(&["index", "--dataset", &p("d.json"), "--holdout", "50", "--out", &p("d.idx")]);
    let out = pros(&["train", "--dataset", &p("d.json"), "--index", &p("d.idx"), "--out", &p("b.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--holdout 300"));
    let out = pros(&["index", "--dataset", &p("missing.json"), "--out", &p("x.idx")]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_json_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = pros_ok(&["bench", "--preset", "tiny", "--out", out]);
    assert!(stdout.contains("time:0.05"));
    let json = std::fs::read_to_string(dir.path().join("tiny.json")).unwrap();
    let report = pros::bench::Report::from_json(&json).unwrap();
    assert_eq!(report.repetitions.len(), 3);
    assert!(dir.path().join("tiny.csv").exists());
    assert!(!pros(&["bench", "--preset", "nope", "--out", out]).status.success());
}
