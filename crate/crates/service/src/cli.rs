//! Subcommands of the `pros` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pros::bench::{run_bench, BenchConfig};
use pros::dataset::{generate_cbf, generate_random_walk, sample_pools, DatasetDescriptor};
use pros::index::{save_index, IndexConfig, IndexKind, IndexTree};
use pros::models::{collect_training, fit_bundle, IndexFingerprint, TrainConfig, WitnessSet};
use pros::series::DistanceKind;
use pros::stopping::{run_with_policy, RunOptions, StoppingPolicy};
use pros::{Error, Result};

use crate::app::{router, AppState};
use crate::engine::{open_index, Engine, QuerySource};

#[derive(Debug, Parser)]
#[command(name = "pros", version, about = "Progressive k-NN search with probabilistic quality guarantees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: `<out>.bin`, `<out>.json` and, for CBF, `<out>.labels`.
    Generate(GenerateArgs),
    /// Build an index over a dataset and save it.
    Index(IndexArgs),
    /// Collect training searches and fit a guarantee bundle.
    Train(TrainArgs),
    /// Run one query under a stopping policy and print the outcome as JSON.
    Query(QueryArgs),
    /// Run the Monte Carlo benchmark and write a JSON and CSV report.
    Bench(BenchArgs),
    /// Serve progressive queries over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Generator {
    Rw,
    Cbf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "rw")]
    pub kind: Generator,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub len: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CBF shape amplitude.
    #[arg(long, default_value_t = 3.0)]
    pub amplitude: f64,
    /// Output stem.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Dataset descriptor (`.json`).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "dstree")]
    pub kind: IndexKind,
    #[arg(long, default_value_t = 100)]
    pub leaf_threshold: usize,
    #[arg(long, default_value_t = 16)]
    pub segments: usize,
    #[arg(long, default_value = "ed")]
    pub distance: DistanceKind,
    /// Series left out of the index, for witnesses and training queries.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value = "ed")]
    pub distance: DistanceKind,
    #[arg(long, default_value_t = 200)]
    pub witnesses: usize,
    #[arg(long, default_value_t = 100)]
    pub training: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Multiplier on the normal-reference KDE bandwidth.
    #[arg(long, default_value_t = pros::bench::DESK_BANDWIDTH_SCALE)]
    pub bandwidth_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Must match the bundle when given.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub distance: Option<DistanceKind>,
    #[arg(long, default_value = "none")]
    pub policy: StoppingPolicy,
    /// Query with this dataset series.
    #[arg(long, group = "source")]
    pub series: Option<u32>,
    /// Query with comma-separated values.
    #[arg(long, group = "source", value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Option<Vec<f64>>,
    /// Query with a random walk drawn from this seed.
    #[arg(long, group = "source")]
    pub seed: Option<u64>,
    /// Also run the search to completion and report exactness.
    #[arg(long)]
    pub audit: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// A named preset.
    #[arg(long, group = "config_source")]
    pub preset: Option<String>,
    /// A JSON bench configuration.
    #[arg(long, group = "config_source")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Policy of requests that name none.
    #[arg(long, default_value = "none")]
    pub policy: StoppingPolicy,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Concurrent searches.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Directory of static console assets served at `/`.
    #[arg(long)]
    pub console: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Index(a) => index(&a),
        Command::Train(a) => train(&a),
        Command::Query(a) => query(&a),
        Command::Bench(a) => bench(&a),
        Command::Serve(a) => serve(a),
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let desc = match a.kind {
        Generator::Rw => generate_random_walk(&a.out, a.n, a.len, a.seed)?,
        Generator::Cbf => generate_cbf(&a.out, a.n, a.len, a.amplitude, &[1.0 / 3.0; 3], a.seed)?,
    };
    println!("{}", serde_json::to_string(&desc)?);
    Ok(())
}

fn index(a: &IndexArgs) -> Result<()> {
    let data = Arc::new(DatasetDescriptor::open(&a.dataset)?.load()?);
    let n = data.n();
    if a.holdout >= n {
        return Err(Error::InvalidArgument(format!("cannot hold out {} of {n} series", a.holdout)));
    }
    let ids = sample_pools(n, a.holdout, 0, a.seed)?.remainder(n);
    let config = IndexConfig::new(a.kind)
        .with_leaf_threshold(a.leaf_threshold)
        .with_segments(a.segments)
        .with_distance(a.distance);
    let tree = IndexTree::build_subset(data, &ids, config)?;
    save_index(&tree, &a.out)?;
    println!(
        "indexed {} of {n} series into {} leaves: {}",
        tree.len(),
        tree.leaf_count(),
        a.out.display()
    );
    Ok(())
}

/// Ids of the dataset that the index does not hold.
fn held_out(tree: &IndexTree) -> Vec<u32> {
    let n = tree.dataset().n();
    let mut indexed = vec![false; n];
    for id in tree.subtree_ids(tree.root()) {
        indexed[id as usize] = true;
    }
    (0..n as u32).filter(|&i| !indexed[i as usize]).collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let (_, _, tree) = open_index(&a.dataset, &a.index)?;
    let data = tree.dataset().clone();
    let mut pool = held_out(&tree);
    let needed = a.witnesses + a.training;
    if pool.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "{} held-out series cannot supply {} witnesses and {} training queries; rebuild the index with --holdout {needed}",
            pool.len(),
            a.witnesses,
            a.training
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let pick = |ids: &[u32]| ids.iter().map(|&i| (Some(i), data.series(i).to_vec())).collect::<Vec<_>>();
    let witnesses = WitnessSet::compute(&tree, pick(&pool[..a.witnesses]), a.k, a.distance)?;
    let records = collect_training(&tree, &pick(&pool[a.witnesses..needed]), &witnesses, a.k, a.distance)?;
    let config = TrainConfig {
        kde_bandwidth_scale: a.bandwidth_scale,
        ..TrainConfig::default()
    };
    let bundle = fit_bundle(
        &records,
        witnesses,
        IndexFingerprint::of(&tree),
        a.distance,
        data.labels(),
        &config,
    )?;
    bundle.save(&a.out)?;
    println!(
        "trained on {} queries ({} moments, {} time bounds): {}",
        records.len(),
        bundle.moments.len(),
        bundle.time_bounds.len(),
        a.out.display()
    );
    Ok(())
}

fn query(a: &QueryArgs) -> Result<()> {
    let engine = Engine::open(&a.dataset, &a.index, &a.bundle)?;
    engine.check_request(a.k, a.distance)?;
    let source = match (&a.values, a.series, a.seed) {
        (Some(v), None, None) => QuerySource::Values(v.clone()),
        (None, Some(i), None) => QuerySource::Series(i),
        (None, None, Some(s)) => QuerySource::RandomWalk(s),
        _ => return Err(Error::InvalidArgument("give one of --series, --values and --seed".into())),
    };
    let values = engine.resolve(&source)?;
    let options = RunOptions {
        audit: a.audit,
        labels: engine.labels(),
        ..RunOptions::default()
    };
    let outcome = run_with_policy(&engine.tree, &engine.bundle, &values, &a.policy, &options)?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let mut config = match (&a.preset, &a.config) {
        (Some(p), None) => BenchConfig::preset(p)?,
        (None, Some(path)) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        _ => return Err(Error::InvalidArgument("give one of --preset and --config".into())),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let report = run_bench(&config)?;
    report.write(&a.out, &config.name)?;
    for p in &report.policies {
        println!(
            "{:<24} exact={} savings={}",
            p.policy.to_string(),
            fmt_opt(p.exact_ratio),
            fmt_opt(p.time_savings)
        );
    }
    println!("report: {}", report_path(&a.out, &config.name).display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn report_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

fn serve(a: ServeArgs) -> Result<()> {
    let engine = Engine::open(&a.dataset, &a.index, &a.bundle)?;
    let state = AppState::new(engine, a.policy, a.parallelism);
    let app = router(state, a.console);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        // Tests and scripts read the bound port from this line.
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })?;
    Ok(())
}
