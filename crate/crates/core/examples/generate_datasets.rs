//! Generates a random-walk and a labeled CBF dataset, writes them to disk and
//! reads them back.
//!
//! `cargo run --release --example generate_datasets [out_dir]`

use pros::dataset::{generate_cbf, generate_random_walk, DatasetDescriptor};

fn main() -> pros::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("pros-data").display().to_string());
    let rw = generate_random_walk(format!("{dir}/walks"), 10_000, 64, 1)?;
    let cbf = generate_cbf(format!("{dir}/cbf"), 3_000, 128, 3.0, &[1.0 / 3.0; 3], 2)?;
    for (name, desc) in [("walks", &rw), ("cbf", &cbf)] {
        println!("{name}: {} x {} -> {}", desc.n, desc.len, desc.data_path().display());
    }

    let reopened = DatasetDescriptor::open(format!("{dir}/cbf.json"))?;
    let data = reopened.load()?;
    let counts = data.labels().unwrap().iter().fold([0usize; 3], |mut c, &l| {
        c[l as usize] += 1;
        c
    });
    println!("cbf classes (cylinder, bell, funnel): {counts:?}");
    let first = reopened.stream()?.next().unwrap()?;
    let mean = first.iter().sum::<f64>() / first.len() as f64;
    println!("series 0 is z-normalized: mean {mean:.2e}");
    Ok(())
}
