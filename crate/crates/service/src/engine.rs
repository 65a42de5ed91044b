//! An index, its dataset and a trained bundle, opened together.

use std::path::Path;
use std::sync::Arc;

use pros::dataset::{random_walk_values, DatasetDescriptor};
use pros::index::{load_index, IndexTree};
use pros::models::GuaranteeBundle;
use pros::series::{z_normalize, DataSeries, DistanceKind};
use pros::{Error, Result};

/// Where a query's values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    /// Raw values; z-normalized when the dataset is.
    Values(Vec<f64>),
    /// A series of the served dataset.
    Series(u32),
    /// A fresh random walk of the dataset's length.
    RandomWalk(u64),
}

pub struct Engine {
    /// Dataset id: the descriptor's file stem.
    pub name: String,
    pub tree: IndexTree,
    pub bundle: GuaranteeBundle,
    pub normalized: bool,
}

impl Engine {
    pub fn open(dataset: &Path, index: &Path, bundle: &Path) -> Result<Self> {
        let (name, desc, tree) = open_index(dataset, index)?;
        let bundle = GuaranteeBundle::load(bundle)?;
        bundle.check_compatible(&tree, bundle.k, bundle.distance)?;
        Ok(Engine {
            name,
            tree,
            bundle,
            normalized: desc.normalized,
        })
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.tree.dataset().labels()
    }

    /// Fails with a bundle mismatch when a requested k or distance differs
    /// from the one the bundle was trained for.
    pub fn check_request(&self, k: Option<usize>, distance: Option<DistanceKind>) -> Result<()> {
        self.bundle.check_compatible(
            &self.tree,
            k.unwrap_or(self.bundle.k),
            distance.unwrap_or(self.bundle.distance),
        )
    }

    pub fn resolve(&self, source: &QuerySource) -> Result<Vec<f64>> {
        let len = self.tree.dataset().series_len();
        match source {
            QuerySource::Values(v) => {
                if v.len() != len {
                    return Err(Error::LengthMismatch {
                        expected: len,
                        actual: v.len(),
                    });
                }
                if self.normalized {
                    z_normalize(v)
                } else {
                    DataSeries::new(0, v.clone()).map(|s| s.values)
                }
            }
            QuerySource::Series(id) => self
                .tree
                .dataset()
                .get(*id)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::InvalidArgument(format!("series {id} is not in dataset `{}`", self.name))),
            QuerySource::RandomWalk(seed) => Ok(random_walk_values(len, *seed, 0)),
        }
    }
}

/// Loads a dataset descriptor and the index built over it.
pub fn open_index(dataset: &Path, index: &Path) -> Result<(String, DatasetDescriptor, IndexTree)> {
    let desc = DatasetDescriptor::open(dataset)?;
    let data = Arc::new(desc.load()?);
    let tree = load_index(index, data)?;
    Ok((dataset_name(dataset), desc, tree))
}

pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}
