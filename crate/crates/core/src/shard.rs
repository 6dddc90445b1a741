//! Random balanced sharding and the ring's inter-shard edge tables.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::oracle::TopK;
use crate::vecdata::{l2_squared, Dataset};
use crate::{rng, GlobalId, LocalId};

/// Where a global point lives after partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub shard: u32,
    pub local: LocalId,
}

/// Disjoint shards covering the dataset, each a self-contained dataset
/// whose rows carry their global ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSet {
    assignment: Vec<Placement>,
    shards: Vec<Dataset>,
}

impl ShardSet {
    /// Rebuilds a shard set from per-shard datasets (e.g. after loading).
    pub fn from_shards(shards: Vec<Dataset>) -> Result<Self> {
        if shards.is_empty() {
            return Err(invalid("shards", "at least one shard required"));
        }
        let d = shards[0].dim();
        let n: usize = shards.iter().map(Dataset::len).sum();
        let mut assignment = alloc::vec![None; n];
        for (s, ds) in shards.iter().enumerate() {
            if ds.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: ds.dim(),
                });
            }
            for local in 0..ds.len() {
                let g = ds.global_id(local) as usize;
                match assignment.get_mut(g) {
                    Some(slot @ None) => {
                        *slot = Some(Placement {
                            shard: s as u32,
                            local: local as LocalId,
                        })
                    }
                    _ => {
                        return Err(Error::ShardMismatch(format!(
                            "global id {g} duplicated or out of range"
                        )))
                    }
                }
            }
        }
        let assignment = assignment.into_iter().map(|p| p.expect("all ids placed")).collect();
        Ok(Self { assignment, shards })
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, s: usize) -> &Dataset {
        &self.shards[s]
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Dataset> {
        self.shards
    }

    pub fn placement(&self, global: GlobalId) -> Placement {
        self.assignment[global as usize]
    }

    pub fn total_len(&self) -> usize {
        self.assignment.len()
    }

    pub fn dim(&self) -> usize {
        self.shards[0].dim()
    }
}

/// Random balanced partition into `n_shards` shards. Shard sizes differ by
/// at most one; rows inside a shard are ordered by global id.
pub fn partition(dataset: &Dataset, n_shards: usize, seed: u64) -> Result<ShardSet> {
    if n_shards == 0 || n_shards > dataset.len() {
        return Err(invalid(
            "shards",
            format!("need 1 <= shards <= n = {}, got {n_shards}", dataset.len()),
        ));
    }
    let mut order: Vec<u32> = (0..dataset.len() as u32).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut members: Vec<Vec<u32>> = alloc::vec![Vec::new(); n_shards];
    for (pos, &row) in order.iter().enumerate() {
        members[pos % n_shards].push(row);
    }
    let shards = members
        .into_iter()
        .map(|mut rows| {
            rows.sort_unstable_by_key(|&r| dataset.global_id(r as usize));
            dataset.gather(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    ShardSet::from_shards(shards)
}

/// `map[u]` = the local id, in the next shard of the ring, of the point
/// nearest to local node `u` of this shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterShardTable {
    pub source: u32,
    pub target: u32,
    pub map: Vec<LocalId>,
}

impl InterShardTable {
    #[inline]
    pub fn translate(&self, u: LocalId) -> LocalId {
        self.map[u as usize]
    }

    pub fn validate(&self, source_len: usize, target_len: usize) -> Result<()> {
        if self.map.len() != source_len {
            return Err(Error::ShardMismatch(format!(
                "inter-shard table has {} entries for {source_len} nodes",
                self.map.len()
            )));
        }
        if let Some(&bad) = self.map.iter().find(|&&v| v as usize >= target_len) {
            return Err(Error::InvalidNode {
                id: bad,
                len: target_len,
            });
        }
        Ok(())
    }
}

/// Brute-force nearest target row for each source row in `rows`.
pub fn nearest_in(source: &Dataset, target: &Dataset, rows: Range<usize>) -> Vec<LocalId> {
    rows.map(|u| {
        let q = source.row(u);
        let mut top = TopK::new(1);
        for (w, row) in target.rows().enumerate() {
            top.offer(l2_squared(q, row), w as LocalId);
        }
        top.into_sorted()[0].1
    })
    .collect()
}

/// Exact inter-shard table from shard `source_idx` into `target`.
pub fn build_inter_shard_table(
    source: &Dataset,
    source_idx: u32,
    target: &Dataset,
    target_idx: u32,
) -> Result<InterShardTable> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    if target.is_empty() {
        return Err(Error::Missing("target shard points"));
    }
    Ok(InterShardTable {
        source: source_idx,
        target: target_idx,
        map: nearest_in(source, target, 0..source.len()),
    })
}

/// Index of the next shard in the ring.
pub fn ring_next(shard: usize, n_shards: usize) -> usize {
    (shard + 1) % n_shards
}
