//! Runs a benchmark preset and prints the headline measures.
//!
//! `cargo run --release --example bench_preset -- desk [out_dir]`

use std::time::Instant;

use pros::bench::BenchConfig;

fn main() -> pros::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "tiny".to_string());
    let out = args.next();
    let config = BenchConfig::preset(&preset)?;
    let started = Instant::now();
    let report = pros::bench::run_bench(&config)?;
    println!(
        "{preset}: {} series, {} leaves, {} repetitions in {:.1}s",
        report.dataset.n,
        report.dataset.leaves,
        config.repetitions,
        started.elapsed().as_secs_f64()
    );
    for c in &report.estimators {
        println!(
            "  {:<8} theta={:<5} {:<8} n={:<6} coverage={:.3} width={:.3} rmse={:.3}",
            c.method.to_string(),
            c.theta,
            c.scope.to_string(),
            c.count,
            c.coverage.unwrap_or(f64::NAN),
            c.mean_width.unwrap_or(f64::NAN),
            c.rmse.unwrap_or(f64::NAN)
        );
    }
    for s in &report.sequential {
        println!(
            "  sequential {} theta={} family coverage={:.3}",
            s.method,
            s.theta,
            s.family_coverage.unwrap_or(f64::NAN)
        );
    }
    for p in &report.policies {
        println!(
            "  {:<22} exact={:.3} class={} savings={:.3} eps={} acc_ratio={}",
            p.policy.to_string(),
            p.exact_ratio.unwrap_or(f64::NAN),
            p.exact_class_ratio.map_or("-".into(), |v| format!("{v:.3}")),
            p.time_savings.unwrap_or(f64::NAN),
            p.epsilon_ratio.map_or("-".into(), |v| format!("{v:.3}")),
            p.accuracy_ratio.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    for c in &report.calibration {
        println!(
            "  calibration {} [{}, {}] n={} rate={:.3}",
            c.model,
            c.low,
            c.high,
            c.count,
            c.observed_rate.unwrap_or(f64::NAN)
        );
    }
    if let Some(c) = &report.classification {
        println!("  exact classifier accuracy {:.3} over {} queries", c.exact_accuracy, c.count);
    }
    if let Some(dir) = out {
        report.write(&dir, &preset)?;
        println!("wrote {dir}/{preset}.json and {dir}/{preset}.csv");
    }
    Ok(())
}
