//! Thread-pool index builds with per-phase timings.

use std::ops::Range;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use ringann_core::direction::{build_direction_table, direction_rows, DirectionTable};
use ringann_core::ghost::build_ghost_index;
use ringann_core::graph::{assemble, build_knn_graph, knn_lists_rows, ProximityGraph};
use ringann_core::pipeline::{ghost_seed, BuildParams, Index, ShardIndex};
use ringann_core::shard::{build_inter_shard_table, nearest_in, partition, ring_next, InterShardTable};
use ringann_core::Dataset;
use serde::Serialize;

use crate::error::{Error, Result};

const ROW_BLOCK: usize = 256;

/// Wall time per build phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BuildTimings {
    pub partition: Duration,
    pub base_graph: Duration,
    pub inter_shard: Duration,
    pub ghost: Duration,
    pub direction: Duration,
}

impl BuildTimings {
    pub fn total(&self) -> Duration {
        self.partition + self.base_graph + self.inter_shard + self.ghost + self.direction
    }

    /// Inter-shard, ghost and direction time relative to the base graph.
    pub fn auxiliary_overhead(&self) -> f64 {
        let aux = (self.inter_shard + self.ghost + self.direction).as_secs_f64();
        aux / self.base_graph.as_secs_f64().max(f64::MIN_POSITIVE)
    }

    pub fn report(&self) -> String {
        let row = |name: &str, d: Duration| format!("{name:<12} {:>10.3} s\n", d.as_secs_f64());
        let mut s = String::new();
        s += &row("partition", self.partition);
        s += &row("base_graph", self.base_graph);
        s += &row("inter_shard", self.inter_shard);
        s += &row("ghost", self.ghost);
        s += &row("direction", self.direction);
        s += &row("total", self.total());
        s += &format!("auxiliary/base {:>9.1} %\n", 100.0 * self.auxiliary_overhead());
        s
    }
}

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}

fn blocks(n: usize) -> Vec<Range<usize>> {
    (0..n).step_by(ROW_BLOCK).map(|s| s..(s + ROW_BLOCK).min(n)).collect()
}

fn graph_parallel(data: &Dataset, degree: usize) -> Result<ProximityGraph> {
    if degree >= data.len() {
        // Let the sequential builder produce the error.
        return Ok(build_knn_graph(data, degree)?);
    }
    let lists = blocks(data.len())
        .into_par_iter()
        .flat_map_iter(|r| knn_lists_rows(data, degree, r))
        .collect::<Vec<_>>();
    Ok(assemble(data.len(), degree, &lists)?)
}

fn inter_parallel(source: &Dataset, si: usize, target: &Dataset, ti: usize) -> Result<InterShardTable> {
    if source.dim() != target.dim() || target.is_empty() {
        return Ok(build_inter_shard_table(source, si as u32, target, ti as u32)?);
    }
    let map = blocks(source.len())
        .into_par_iter()
        .flat_map_iter(|r| nearest_in(source, target, r))
        .collect();
    Ok(InterShardTable {
        source: si as u32,
        target: ti as u32,
        map,
    })
}

fn directions_parallel(data: &Dataset, graph: &ProximityGraph) -> Result<DirectionTable> {
    if data.len() != graph.len() {
        return Ok(build_direction_table(data, graph)?);
    }
    let words = blocks(data.len())
        .into_par_iter()
        .flat_map_iter(|r| direction_rows(data, graph, r))
        .collect();
    Ok(DirectionTable::from_parts(data.len(), graph.degree(), data.dim(), words)?)
}

/// Builds the same index as [`ringann_core::pipeline::build_index`], on
/// `threads` threads. With one thread the sequential builders are used
/// directly.
pub fn build_index(dataset: &Dataset, params: &BuildParams, threads: usize) -> Result<(Index, BuildTimings)> {
    let pool = pool(threads)?;
    let sequential = threads == 1;
    let mut t = BuildTimings::default();

    let clock = Instant::now();
    let set = partition(dataset, params.shards, params.seed)?;
    t.partition = clock.elapsed();
    let n = set.num_shards();
    log::info!("partitioned {} points into {n} shard(s)", dataset.len());

    let clock = Instant::now();
    let graphs = pool.install(|| {
        set.shards()
            .iter()
            .map(|data| match sequential {
                true => Ok(build_knn_graph(data, params.degree)?),
                false => graph_parallel(data, params.degree),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    t.base_graph = clock.elapsed();
    log::info!("base graphs built in {:.2?}", t.base_graph);

    let clock = Instant::now();
    let inters = if params.inter_shard && n > 1 {
        pool.install(|| {
            (0..n)
                .map(|s| {
                    let next = ring_next(s, n);
                    match sequential {
                        true => Ok(build_inter_shard_table(set.shard(s), s as u32, set.shard(next), next as u32)?),
                        false => inter_parallel(set.shard(s), s, set.shard(next), next),
                    }
                    .map(Some)
                })
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        vec![None; n]
    };
    t.inter_shard = clock.elapsed();

    let clock = Instant::now();
    let ghosts = match params.ghost {
        Some(g) => pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|s| Ok(Some(build_ghost_index(set.shard(s), g.ratio, g.degree, ghost_seed(params.seed, s))?)))
                .collect::<Result<Vec<_>>>()
        })?,
        None => vec![None; n],
    };
    t.ghost = clock.elapsed();

    let clock = Instant::now();
    let directions = if params.directions {
        pool.install(|| {
            (0..n)
                .map(|s| {
                    match sequential {
                        true => Ok(build_direction_table(set.shard(s), &graphs[s])?),
                        false => directions_parallel(set.shard(s), &graphs[s]),
                    }
                    .map(Some)
                })
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        vec![None; n]
    };
    t.direction = clock.elapsed();

    let shards = set
        .into_shards()
        .into_iter()
        .zip(graphs)
        .zip(inters)
        .zip(ghosts)
        .zip(directions)
        .map(|((((data, graph), inter), ghost), directions)| ShardIndex {
            data,
            graph,
            inter,
            ghost,
            directions,
        })
        .collect();
    Ok((Index { shards }, t))
}
