//! Multi-shard search: independent per-shard search with a final
//! reduction, or a ring pipeline in which each shard seeds the next.
//!
//! In pipelined mode the query batch is cut into one chunk per shard and
//! chunk `c` visits shard `(c + s) mod N` at stage `s`. After every stage
//! except the last, the shard translates its top-1 result through its
//! inter-shard table and forwards the resulting local id (4 bytes per
//! query) to the next shard, where it seeds the candidate buffer.
//!
//! Everything here is a pure function of its inputs. [`run_stage`] is the
//! unit of work shared by the sequential drivers below and the threaded
//! ring driver in the `ringann` crate.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::direction::{build_direction_table, DirectionTable};
use crate::error::{invalid, Error, Result};
use crate::ghost::{build_ghost_index, GhostIndex};
use crate::graph::{build_knn_graph, ProximityGraph};
use crate::oracle::Neighbor;
use crate::rng::GHOST_STAGE_BIT;
use crate::search::{neighbor_cmp, search, Counters, GraphView, SearchParams, SearchRequest, SearchResult};
use crate::shard::{build_inter_shard_table, partition, ring_next, InterShardTable, ShardSet};
use crate::vecdata::{Dataset, QuerySet};
use crate::LocalId;

/// Bytes per forwarded entry id.
pub const ID_BYTES: u64 = 4;

/// Everything one shard worker owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardIndex {
    pub data: Dataset,
    pub graph: ProximityGraph,
    pub inter: Option<InterShardTable>,
    pub ghost: Option<GhostIndex>,
    pub directions: Option<DirectionTable>,
}

impl ShardIndex {
    pub fn view(&self) -> GraphView<'_> {
        GraphView {
            data: &self.data,
            graph: &self.graph,
            directions: self.directions.as_ref(),
        }
    }
}

/// All shards of a built index.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub shards: Vec<ShardIndex>,
}

impl Index {
    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.shards[0].data.dim()
    }

    pub fn total_len(&self) -> usize {
        self.shards.iter().map(|s| s.data.len()).sum()
    }

    pub fn shard_set(&self) -> Result<ShardSet> {
        ShardSet::from_shards(self.shards.iter().map(|s| s.data.clone()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.shards.is_empty() {
            return Err(invalid("index", "no shards"));
        }
        let n = self.shards.len();
        let d = self.dim();
        for (i, s) in self.shards.iter().enumerate() {
            if s.data.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.data.dim(),
                });
            }
            if s.graph.len() != s.data.len() {
                return Err(Error::ShardMismatch(alloc::format!("shard {i}: graph size differs from data")));
            }
            if let Some(t) = &s.inter {
                let next = ring_next(i, n);
                if t.source as usize != i || t.target as usize != next {
                    return Err(Error::ShardMismatch(alloc::format!("shard {i}: inter-shard table links the wrong shards")));
                }
                t.validate(s.data.len(), self.shards[next].data.len())?;
            }
            if let Some(g) = &s.ghost {
                if g.ids.last().is_some_and(|&x| x as usize >= s.data.len()) {
                    return Err(Error::ShardMismatch(alloc::format!("shard {i}: ghost id out of range")));
                }
            }
            if let Some(dt) = &s.directions {
                if dt.len() != s.data.len() || dt.degree() != s.graph.degree() || dt.dim() != d {
                    return Err(Error::ShardMismatch(alloc::format!("shard {i}: direction table shape")));
                }
            }
        }
        self.shard_set().map(|_| ())
    }
}

/// Ghost-graph build settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostBuild {
    pub ratio: f64,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildParams {
    pub shards: usize,
    pub degree: usize,
    pub ghost: Option<GhostBuild>,
    pub directions: bool,
    pub inter_shard: bool,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            shards: 1,
            degree: 64,
            ghost: None,
            directions: true,
            inter_shard: true,
            seed: 0,
        }
    }
}

/// Seed for the ghost sample of shard `s`.
pub fn ghost_seed(seed: u64, shard: usize) -> u64 {
    crate::rng::mix(&[seed, 0x6057, shard as u64])
}

/// Single-threaded index build.
pub fn build_index(dataset: &Dataset, params: &BuildParams) -> Result<Index> {
    let set = partition(dataset, params.shards, params.seed)?;
    let n = set.num_shards();
    let mut shards = Vec::with_capacity(n);
    for (s, data) in set.shards().iter().enumerate() {
        let graph = build_knn_graph(data, params.degree)?;
        let inter = if params.inter_shard && n > 1 {
            let next = ring_next(s, n);
            Some(build_inter_shard_table(data, s as u32, set.shard(next), next as u32)?)
        } else {
            None
        };
        let ghost = match params.ghost {
            Some(g) => Some(build_ghost_index(data, g.ratio, g.degree, ghost_seed(params.seed, s))?),
            None => None,
        };
        let directions = if params.directions {
            Some(build_direction_table(data, &graph)?)
        } else {
            None
        };
        shards.push(ShardIndex {
            data: data.clone(),
            graph,
            inter,
            ghost,
            directions,
        });
    }
    Ok(Index { shards })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Pipelined,
}

/// How a stage that received forwarded entries fills its buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSeeding {
    /// Forwarded entries, then random nodes.
    EntryPlusRandom,
    /// Forwarded entries and their graph neighbors, then random nodes.
    EntryPlusNeighbors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub search: SearchParams,
    pub seeding: StageSeeding,
    /// Results forwarded per query between stages.
    pub forward_count: usize,
    /// Per-stage `max_iter` overrides, indexed by stage.
    pub stage_budgets: Option<Vec<usize>>,
}

impl PipelineParams {
    pub fn new(search: SearchParams) -> Self {
        Self {
            search,
            seeding: StageSeeding::EntryPlusRandom,
            forward_count: 1,
            stage_budgets: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.forward_count == 0 {
            return Err(invalid("forward_count", "must be at least 1"));
        }
        if let Some(b) = &self.stage_budgets {
            if b.contains(&0) {
                return Err(invalid("stage_budgets", "budgets must be positive"));
            }
        }
        Ok(())
    }

    fn budget(&self, stage: usize) -> usize {
        self.stage_budgets
            .as_ref()
            .and_then(|b| b.get(stage).copied())
            .unwrap_or(self.search.max_iter)
    }
}

/// Entry ids sent from one shard worker to the next for one chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageMessage {
    /// Stage the receiver will run.
    pub stage: u32,
    pub chunk: u32,
    /// `forward_count` entries per query, in query order, local to the
    /// receiving shard.
    pub entries: Vec<LocalId>,
}

impl StageMessage {
    pub fn payload_bytes(&self) -> u64 {
        self.entries.len() as u64 * ID_BYTES
    }
}

/// Ghost-graph search; returns the parent-shard local id of the ghost
/// top-1 and the ghost search's counters.
pub fn run_ghost_stage(
    index: &ShardIndex,
    query: &[f32],
    query_id: u32,
    stage: u64,
    params: &SearchParams,
) -> Result<(LocalId, Counters)> {
    let ghost = index.ghost.as_ref().ok_or(Error::Missing("ghost index"))?;
    let max_iter = params.ghost.map(|g| g.max_iter).unwrap_or(params.max_iter);
    let ghost_params = SearchParams {
        k: 1,
        max_iter,
        dgs: None,
        ghost: None,
        log_visits: false,
        ..params.clone()
    };
    let view = GraphView::new(&ghost.vectors, &ghost.graph);
    let req = SearchRequest {
        query,
        query_id,
        stage: GHOST_STAGE_BIT | stage,
        seeds: &[],
    };
    let res = search(&view, &req, &ghost_params)?;
    Ok((ghost.parent_id(res.local_ids[0]), res.counters))
}

/// Result of one query at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub result: SearchResult,
    pub ghost: Option<Counters>,
}

/// One query, one shard, one stage. `entries` are forwarded seeds (empty
/// on a first stage, which then uses ghost staging when enabled).
pub fn run_stage(
    index: &ShardIndex,
    query: &[f32],
    query_id: u32,
    stage: usize,
    entries: &[LocalId],
    params: &PipelineParams,
) -> Result<StageOutcome> {
    let mut search_params = params.search.clone();
    search_params.max_iter = params.budget(stage);
    let mut ghost = None;
    let mut seeds: Vec<LocalId> = Vec::new();
    if entries.is_empty() {
        if params.search.ghost.is_some() {
            let (seed, counters) = run_ghost_stage(index, query, query_id, stage as u64, &search_params)?;
            seeds.push(seed);
            ghost = Some(counters);
        }
    } else {
        seeds.extend_from_slice(entries);
        if params.seeding == StageSeeding::EntryPlusNeighbors {
            for &e in entries {
                if e as usize >= index.graph.len() {
                    return Err(Error::InvalidNode {
                        id: e,
                        len: index.graph.len(),
                    });
                }
                seeds.extend_from_slice(index.graph.neighbors(e));
            }
        }
    }
    let req = SearchRequest {
        query,
        query_id,
        stage: stage as u64,
        seeds: &seeds,
    };
    let result = search(&index.view(), &req, &search_params)?;
    Ok(StageOutcome { result, ghost })
}

/// Translates the top `count` results of a stage into the next shard.
pub fn forward_entries(index: &ShardIndex, result: &SearchResult, count: usize) -> Result<Vec<LocalId>> {
    let table = index.inter.as_ref().ok_or(Error::Missing("inter-shard table"))?;
    Ok(result.local_ids.iter().take(count).map(|&z| table.translate(z)).collect())
}

/// Best `k` of the union of per-shard lists by `(distance, id)`.
pub fn reduce(lists: &[Vec<Neighbor>], k: usize) -> Result<Vec<Neighbor>> {
    let mut all: Vec<Neighbor> = lists.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::Missing("candidates to reduce"));
    }
    all.sort_by(neighbor_cmp);
    all.truncate(k);
    Ok(all)
}

/// Splits `q` queries into `n` contiguous chunks whose sizes differ by at
/// most one.
pub fn chunk_ranges(q: usize, n: usize) -> Vec<Range<usize>> {
    let (base, extra) = (q / n, q % n);
    let mut start = 0;
    (0..n)
        .map(|c| {
            let len = base + usize::from(c < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Shard visited by chunk `chunk` at stage `stage`.
pub fn ring_shard(chunk: usize, stage: usize, n_shards: usize) -> usize {
    (chunk + stage) % n_shards
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: u32,
    pub shard: u32,
    pub counters: Counters,
    pub ghost: Option<Counters>,
    pub converged: bool,
    pub visit_log: Option<crate::search::VisitLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: u32,
    /// Shard-local top-k lists, indexed by shard.
    pub shard_lists: Vec<Vec<Neighbor>>,
    /// One record per stage, in stage order.
    pub stages: Vec<StageRecord>,
    pub top_k: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub stage: u32,
    pub chunk: u32,
    pub from: u32,
    pub to: u32,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub mode: Mode,
    pub num_shards: usize,
    pub forward_count: usize,
    pub queries: Vec<QueryOutcome>,
    /// Bytes sent over link `i -> i+1`, indexed by sender.
    pub link_bytes: Vec<u64>,
    pub messages: Vec<MessageRecord>,
}

impl PipelineResult {
    pub fn total_comm_bytes(&self) -> u64 {
        self.link_bytes.iter().sum()
    }
}

/// Output of one (chunk, stage) unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStage {
    pub chunk: usize,
    pub stage: usize,
    pub shard: usize,
    /// First query id of the chunk.
    pub first_query: usize,
    pub outcomes: Vec<StageOutcome>,
    /// Message sent downstream after this stage, if any.
    pub message: Option<StageMessage>,
}

/// Runs one chunk at one stage on its shard, sequentially over queries.
#[allow(clippy::too_many_arguments)]
pub fn run_chunk_stage(
    index: &ShardIndex,
    queries: &QuerySet,
    range: Range<usize>,
    chunk: usize,
    stage: usize,
    shard: usize,
    incoming: Option<&StageMessage>,
    params: &PipelineParams,
    n_stages: usize,
) -> Result<ChunkStage> {
    let outcomes = range
        .clone()
        .enumerate()
        .map(|(pos, qi)| {
            let entries = entries_for(incoming, pos, params.forward_count);
            run_stage(index, queries.row(qi), qi as u32, stage, entries, params)
        })
        .collect::<Result<Vec<_>>>()?;
    finish_chunk_stage(index, range, chunk, stage, shard, outcomes, params, n_stages)
}

/// The slice of an incoming message addressed to the `pos`-th query.
pub fn entries_for(incoming: Option<&StageMessage>, pos: usize, forward_count: usize) -> &[LocalId] {
    match incoming {
        Some(m) => {
            let end = ((pos + 1) * forward_count).min(m.entries.len());
            &m.entries[(pos * forward_count).min(end)..end]
        }
        None => &[],
    }
}

/// Packages finished outcomes and builds the downstream message.
#[allow(clippy::too_many_arguments)]
pub fn finish_chunk_stage(
    index: &ShardIndex,
    range: Range<usize>,
    chunk: usize,
    stage: usize,
    shard: usize,
    outcomes: Vec<StageOutcome>,
    params: &PipelineParams,
    n_stages: usize,
) -> Result<ChunkStage> {
    let message = if stage + 1 < n_stages {
        let mut entries = Vec::with_capacity(outcomes.len() * params.forward_count);
        for o in &outcomes {
            let fwd = forward_entries(index, &o.result, params.forward_count)?;
            if fwd.len() != params.forward_count {
                return Err(invalid("forward_count", "exceeds the stage's result count"));
            }
            entries.extend(fwd);
        }
        Some(StageMessage {
            stage: (stage + 1) as u32,
            chunk: chunk as u32,
            entries,
        })
    } else {
        None
    };
    Ok(ChunkStage {
        chunk,
        stage,
        shard,
        first_query: range.start,
        outcomes,
        message,
    })
}

/// Assembles per-(chunk, stage) outputs into a result. Independent of the
/// order in which the pieces were produced.
pub fn assemble(
    mode: Mode,
    num_queries: usize,
    num_shards: usize,
    k: usize,
    forward_count: usize,
    mut pieces: Vec<ChunkStage>,
) -> Result<PipelineResult> {
    pieces.sort_by_key(|p| (p.stage, p.chunk, p.shard));
    let mut queries: Vec<QueryOutcome> = (0..num_queries)
        .map(|q| QueryOutcome {
            query_id: q as u32,
            shard_lists: vec![Vec::new(); num_shards],
            stages: Vec::with_capacity(num_shards),
            top_k: Vec::new(),
        })
        .collect();
    let mut link_bytes = vec![0u64; num_shards];
    let mut messages = Vec::new();
    for p in pieces {
        for (pos, o) in p.outcomes.into_iter().enumerate() {
            let q = &mut queries[p.first_query + pos];
            q.shard_lists[p.shard] = o.result.neighbors;
            q.stages.push(StageRecord {
                stage: p.stage as u32,
                shard: p.shard as u32,
                counters: o.result.counters,
                ghost: o.ghost,
                converged: o.result.converged,
                visit_log: o.result.visit_log,
            });
        }
        if let Some(m) = p.message {
            let to = ring_next(p.shard, num_shards);
            link_bytes[p.shard] += m.payload_bytes();
            messages.push(MessageRecord {
                stage: p.stage as u32,
                chunk: p.chunk as u32,
                from: p.shard as u32,
                to: to as u32,
                bytes: m.payload_bytes(),
            });
        }
    }
    for q in &mut queries {
        if q.stages.len() != num_shards {
            return Err(Error::ShardMismatch(alloc::format!(
                "query {} ran {} stages for {num_shards} shards",
                q.query_id,
                q.stages.len()
            )));
        }
        q.top_k = reduce(&q.shard_lists, k)?;
    }
    Ok(PipelineResult {
        mode,
        num_shards,
        forward_count,
        queries,
        link_bytes,
        messages,
    })
}

/// Validates parameters, index and query dimension before a run.
pub fn check_inputs(index: &Index, queries: &QuerySet, params: &PipelineParams) -> Result<()> {
    params.validate()?;
    index.validate()?;
    if queries.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: queries.dim(),
        });
    }
    Ok(())
}

/// Every query searched independently in every shard from random (or
/// ghost-staged) seeds; no inter-shard traffic.
pub fn run_sharded_baseline(index: &Index, queries: &QuerySet, params: &PipelineParams) -> Result<PipelineResult> {
    check_inputs(index, queries, params)?;
    let n = index.num_shards();
    let mut pieces = Vec::with_capacity(n);
    for (s, shard) in index.shards.iter().enumerate() {
        pieces.push(run_chunk_stage(shard, queries, 0..queries.len(), 0, s, s, None, params, 0)?);
    }
    assemble(Mode::Baseline, queries.len(), n, params.search.k, params.forward_count, pieces)
}

/// Checks that every shard can forward to its ring successor.
pub fn check_pipeline_ready(index: &Index) -> Result<()> {
    if index.num_shards() > 1 && index.shards.iter().any(|s| s.inter.is_none()) {
        return Err(Error::Missing("inter-shard table"));
    }
    Ok(())
}

/// Ring pipeline, one stage at a time (the reference schedule).
pub fn run_pipelined(index: &Index, queries: &QuerySet, params: &PipelineParams) -> Result<PipelineResult> {
    check_inputs(index, queries, params)?;
    check_pipeline_ready(index)?;
    let n = index.num_shards();
    let chunks = chunk_ranges(queries.len(), n);
    let mut inbox: Vec<Option<StageMessage>> = vec![None; n];
    let mut pieces = Vec::with_capacity(n * n);
    for stage in 0..n {
        for (c, range) in chunks.iter().enumerate() {
            let shard = ring_shard(c, stage, n);
            let piece = run_chunk_stage(
                &index.shards[shard],
                queries,
                range.clone(),
                c,
                stage,
                shard,
                inbox[c].as_ref(),
                params,
                n,
            )?;
            inbox[c] = piece.message.clone();
            pieces.push(piece);
        }
    }
    assemble(Mode::Pipelined, queries.len(), n, params.search.k, params.forward_count, pieces)
}

/// Dispatches on `mode`.
pub fn run(mode: Mode, index: &Index, queries: &QuerySet, params: &PipelineParams) -> Result<PipelineResult> {
    match mode {
        Mode::Baseline => run_sharded_baseline(index, queries, params),
        Mode::Pipelined => run_pipelined(index, queries, params),
    }
}
