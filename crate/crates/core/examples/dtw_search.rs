//! DTW k-NN search: the lower-bound chain for one candidate, then an exact
//! progressive search with a Sakoe-Chiba band of 10% of the length.
//!
//! `cargo run --release --example dtw_search`

use std::ops::ControlFlow;
use std::sync::Arc;

use pros::dataset::{random_walk_dataset, random_walk_values};
use pros::index::{IndexConfig, IndexKind, IndexTree};
use pros::search::{brute_force_knn, progressive_knn, SearchConfig};
use pros::series::{build_envelope, dtw, lb_keogh, DistanceKind};
use pros::summaries::{eapca, lb_eapca, lb_paa, paa, summarize_envelope_eapca, summarize_envelope_paa, SegmentLayout};

fn main() -> pros::Result<()> {
    let len = 64;
    let distance = DistanceKind::dtw_fraction(len, 0.1);
    let DistanceKind::Dtw { band } = distance else { unreachable!() };
    let data = Arc::new(random_walk_dataset(10_000, len, 8)?);
    let query = random_walk_values(len, 77, 0);

    let candidate = data.series(0);
    let env = build_envelope(&query, band)?;
    let layout = SegmentLayout::equal(len, 8)?;
    let by_paa = lb_paa(&summarize_envelope_paa(&env, 8)?, &paa(candidate, 8)?)?;
    let by_eapca = lb_eapca(&summarize_envelope_eapca(&env, &layout)?, &eapca(candidate, &layout)?)?;
    println!(
        "lb_paa {by_paa:.4} and lb_eapca {by_eapca:.4} <= lb_keogh {:.4} <= dtw {:.4}",
        lb_keogh(&env, candidate)?,
        dtw(&query, candidate, band)?
    );

    for kind in [IndexKind::Isax, IndexKind::Dstree] {
        let tree = IndexTree::build(data.clone(), IndexConfig::new(kind).with_distance(distance))?;
        let config = SearchConfig::new(5, distance).with_checkpoints(Vec::new());
        let trace = progressive_knn(&tree, &query, &config, |_| ControlFlow::Continue(()))?;
        assert_eq!(trace.answer, brute_force_knn(&data, &query, 5, distance)?);
        println!(
            "{kind}: 5-NN under DTW(r={band}) exact, {} of {} leaves visited, first answer {:.4}, final {:.4}",
            trace.total_leaves,
            tree.leaf_count(),
            trace.events[0].bsf_k(),
            trace.answer[4].distance
        );
    }
    Ok(())
}
