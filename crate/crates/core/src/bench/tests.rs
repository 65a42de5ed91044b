use super::*;

fn tiny() -> BenchConfig {
    BenchConfig::preset("tiny").unwrap()
}

#[test]
fn cells_count_every_atomic_measurement() {
    let mut c = tiny();
    c.repetitions = 1;
    c.testing = 5;
    let r = run_bench(&c).unwrap();
    for cell in &r.estimators {
        match cell.scope {
            Scope::Initial => assert_eq!(cell.count + cell.missing, 5, "{cell:?}"),
            Scope::Leaves(_) => assert!(cell.count + cell.missing <= 5),
            Scope::Pooled => {}
        }
    }
    for p in &r.policies {
        assert_eq!(p.count, 5);
    }
    assert_eq!(r.repetitions.len(), 1);
}

#[test]
fn reports_are_deterministic() {
    let c = tiny();
    let a = run_bench(&c).unwrap();
    let b = run_bench(&c).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    let mut c2 = c.clone();
    c2.seed += 1;
    assert_ne!(run_bench(&c2).unwrap().to_json().unwrap(), a.to_json().unwrap());
    assert_eq!(Report::from_json(&a.to_json().unwrap()).unwrap(), a);
}

#[test]
fn policy_none_is_exact_and_saves_nothing() {
    let r = run_bench(&tiny()).unwrap();
    let none = r.policy(&StoppingPolicy::None).unwrap();
    assert_eq!(none.exact_ratio, Some(1.0));
    assert_eq!(none.time_savings, Some(0.0));
    assert_eq!(none.stopped_ratio, 0.0);
    for p in &r.policies {
        let e = p.exact_ratio.unwrap();
        assert!((0.0..=1.0).contains(&e));
        assert!(p.time_savings.unwrap() >= 0.0);
    }
    assert_eq!(r.repetitions.len(), 3);
    assert!(r.to_csv().unwrap().lines().count() > r.estimators.len());
}

#[test]
fn class_rates_dominate_exact_rates() {
    let r = run_bench(&BenchConfig::preset("tiny-cbf").unwrap()).unwrap();
    for p in &r.policies {
        assert!(p.exact_class_ratio.unwrap() >= p.exact_ratio.unwrap(), "{p:?}");
    }
    for c in &r.checkpoint_rates {
        if let (Some(a), Some(b)) = (c.exact_rate, c.exact_class_rate) {
            assert!(b >= a);
        }
    }
    let class = r.classification.as_ref().unwrap();
    assert!(class.exact_accuracy > 0.4);
    let none = r.policy(&StoppingPolicy::None).unwrap();
    assert_eq!(none.accuracy_ratio, Some(1.0));
}

#[test]
fn repetition_errors_carry_the_index() {
    let mut c = tiny();
    c.train.moments = 0;
    match run_bench(&c) {
        Err(Error::Repetition { repetition, .. }) => assert_eq!(repetition, 0),
        other => panic!("expected a repetition error, got {other:?}"),
    }
    let mut c = tiny();
    c.witnesses = c.witness_pool + 1;
    assert!(run_bench(&c).is_err());
    assert!(BenchConfig::preset("huge").is_err());
}

#[test]
fn repetition_seeds_differ() {
    let s: Vec<u64> = (0..5).map(|r| repetition_seed(7, r)).collect();
    let mut d = s.clone();
    d.sort_unstable();
    d.dedup();
    assert_eq!(d.len(), 5);
    assert_eq!(repetition_seed(7, 3), s[3]);
}
