//! Sharded, pipelined proximity-graph search.
//!
//! This crate holds the pure algorithmic part: distances, the exact kNN
//! oracle, graph and auxiliary-table construction, the beam-search kernel
//! with direction-guided neighbor selection, ring-pipeline staging over
//! shards, and visit accounting. It is `no_std` and only needs `alloc`;
//! file formats, threading and the command line live in the `ringann`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod direction;
pub mod error;
pub mod ghost;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod search;
pub mod shard;
pub mod vecdata;

pub use error::{Error, Result};
pub use oracle::{Neighbor, NeighborList};
pub use search::{SearchParams, SearchResult};
pub use vecdata::Dataset;

/// Local node id within one shard (or one ghost graph).
pub type LocalId = u32;

/// Point id in the unsharded dataset.
pub type GlobalId = u32;

/// `ceil(x)` that ignores binary rounding noise, e.g. `0.7 * 10.0`.
pub(crate) fn ceil_tolerant(x: f64) -> usize {
    libm::ceil(x - 1e-9).max(0.0) as usize
}
