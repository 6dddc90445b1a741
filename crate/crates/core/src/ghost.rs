//! Ghost graphs: a small random sample of a shard with its own kNN graph,
//! searched first to find an entry point into the full shard graph.
//!
//! Ghost nodes are members of their parent shard, so the transition back
//! to the parent graph is the identity on local ids.

use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{invalid, Result};
use crate::graph::{build_knn_graph, ProximityGraph};
use crate::vecdata::Dataset;
use crate::{ceil_tolerant, rng, LocalId};

/// Default ghost out-degree for a main-graph degree `j`.
pub fn default_ghost_degree(j: usize) -> usize {
    j.min(16)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GhostIndex {
    /// Parent-shard local ids, ascending. Ghost node `g` is `ids[g]`.
    pub ids: Vec<LocalId>,
    pub graph: ProximityGraph,
    /// Copies of the ghost vectors, row `g` for ghost node `g`.
    pub vectors: Dataset,
}

impl GhostIndex {
    /// Reassembles a ghost index from stored ids and adjacency.
    pub fn from_parts(shard: &Dataset, ids: Vec<LocalId>, graph: ProximityGraph) -> Result<Self> {
        if ids.len() != graph.len() {
            return Err(invalid("ghost", "id count differs from ghost graph size"));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("ghost", "ids must be strictly ascending"));
        }
        let vectors = shard.gather(&ids)?;
        Ok(Self { ids, graph, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Parent-shard local id of ghost node `g`.
    #[inline]
    pub fn parent_id(&self, g: LocalId) -> LocalId {
        self.ids[g as usize]
    }
}

/// Ghost sample size for `n_local` points at sampling ratio `ratio`.
pub fn ghost_count(n_local: usize, ratio: f64) -> usize {
    ceil_tolerant(ratio * n_local as f64).min(n_local)
}

/// Samples `ceil(ratio * n)` distinct nodes of `shard` and links them with
/// an exact kNN graph of out-degree `degree`.
pub fn build_ghost_index(shard: &Dataset, ratio: f64, degree: usize, seed: u64) -> Result<GhostIndex> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(invalid("ghost ratio", "must lie in (0, 1]"));
    }
    let count = ghost_count(shard.len(), ratio);
    if count <= degree {
        return Err(invalid(
            "ghost ratio",
            alloc::format!("{count} ghost nodes cannot carry out-degree {degree}"),
        ));
    }
    let mut ids: Vec<LocalId> = index::sample(&mut rng::seeded(seed), shard.len(), count)
        .into_iter()
        .map(|i| i as LocalId)
        .collect();
    ids.sort_unstable();
    let vectors = shard.gather(&ids)?;
    let graph = build_knn_graph(&vectors, degree)?;
    Ok(GhostIndex { ids, graph, vectors })
}
