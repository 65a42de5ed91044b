//! Builds both index kinds over the same random walks, saves them and checks
//! that a reloaded index answers like the original.
//!
//! `cargo run --release --example build_index`

use std::sync::Arc;

use pros::dataset::random_walk_dataset;
use pros::index::{load_index, save_index, IndexConfig, IndexKind, IndexTree};
use pros::series::DistanceKind;

fn main() -> pros::Result<()> {
    let data = Arc::new(random_walk_dataset(20_000, 64, 3)?);
    let dir = std::env::temp_dir();
    for kind in [IndexKind::Isax, IndexKind::Dstree] {
        let tree = IndexTree::build(data.clone(), IndexConfig::new(kind))?;
        let depth = tree.nodes().len();
        let path = dir.join(format!("pros-example-{kind}.idx"));
        save_index(&tree, &path)?;
        let size = std::fs::metadata(&path)?.len();
        let loaded = load_index(&path, data.clone())?;
        let q = data.series(42);
        let a = tree.approximate_search(q, 5, DistanceKind::Euclidean)?;
        let b = loaded.approximate_search(q, 5, DistanceKind::Euclidean)?;
        assert_eq!(a, b);
        println!(
            "{kind}: {} series, {} nodes, {} leaves, {} bytes on disk",
            tree.len(),
            depth,
            tree.leaf_count(),
            size
        );
    }
    Ok(())
}
