//! Iterative beam search over one proximity graph.
//!
//! The state is a size-`l` priority queue, a size-`m` candidate buffer and
//! an exact visited set. Each iteration picks the `r` best unexpanded queue
//! entries, fetches (optionally direction-filtered) neighbors into the
//! buffer, scores the unvisited ones and merges them into the queue. The
//! search stops when an iteration admits nothing new into the queue, when
//! no unexpanded parent remains, or when `max_iter` is spent.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;

use crate::direction::{in_cooldown, pack_signs, select_neighbors, select_random, words_for, DirectionTable};
use crate::error::{invalid, Error, Result};
use crate::graph::ProximityGraph;
use crate::oracle::{rank_cmp, Neighbor};
use crate::rng;
use crate::vecdata::{l2_squared, Dataset};
use crate::LocalId;

/// How pruned neighbor lists are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Rank neighbors by sign-bit agreement with the query direction.
    Direction,
    /// Keep a uniform random subset (comparison baseline).
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgsParams {
    pub discard_ratio: f64,
    pub cooldown_ratio: f64,
    pub strategy: SelectionStrategy,
}

impl Default for DgsParams {
    fn default() -> Self {
        Self {
            discard_ratio: 0.5,
            cooldown_ratio: 0.3,
            strategy: SelectionStrategy::Direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostParams {
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    /// Priority-queue size.
    pub l: usize,
    /// Candidate-buffer size.
    pub m: usize,
    /// Parents expanded per iteration.
    pub r: usize,
    pub max_iter: usize,
    /// Run seed; per-query streams derive from it.
    pub seed: u64,
    pub dgs: Option<DgsParams>,
    pub ghost: Option<GhostParams>,
    /// Clear the visited set once it holds this many ids. `None` = exact.
    pub visited_capacity: Option<usize>,
    pub log_visits: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 10,
            l: 64,
            m: 64,
            r: 8,
            max_iter: 64,
            seed: 0,
            dgs: None,
            ghost: None,
            visited_capacity: None,
            log_visits: false,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.l {
            return Err(invalid("k", "need 1 <= k <= l"));
        }
        if self.r == 0 || self.r > self.l {
            return Err(invalid("r", "need 1 <= r <= l"));
        }
        if self.m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if let Some(dgs) = &self.dgs {
            if !(0.0..1.0).contains(&dgs.discard_ratio) {
                return Err(invalid("discard_ratio", "must lie in [0, 1)"));
            }
            if !(0.0..=1.0).contains(&dgs.cooldown_ratio) {
                return Err(invalid("cooldown_ratio", "must lie in [0, 1]"));
            }
        }
        if let Some(g) = &self.ghost {
            if g.max_iter == 0 {
                return Err(invalid("ghost_max_iter", "must be at least 1"));
            }
        }
        if self.visited_capacity == Some(0) {
            return Err(invalid("visited_capacity", "must be positive"));
        }
        Ok(())
    }
}

/// Vectors, adjacency and (optionally) edge directions of one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphView<'a> {
    pub data: &'a Dataset,
    pub graph: &'a ProximityGraph,
    pub directions: Option<&'a DirectionTable>,
}

impl<'a> GraphView<'a> {
    pub fn new(data: &'a Dataset, graph: &'a ProximityGraph) -> Self {
        Self {
            data,
            graph,
            directions: None,
        }
    }

    pub fn with_directions(mut self, directions: &'a DirectionTable) -> Self {
        self.directions = Some(directions);
        self
    }
}

pub const DUMMY: LocalId = LocalId::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry {
    pub id: LocalId,
    /// Squared distance to the query; `+inf` for dummies.
    pub dist: f32,
    pub expanded: bool,
}

impl QueueEntry {
    const fn dummy() -> Self {
        Self {
            id: DUMMY,
            dist: f32::INFINITY,
            expanded: false,
        }
    }

    pub fn is_dummy(&self) -> bool {
        self.id == DUMMY
    }
}

/// Exact visited set over `n` local ids.
#[derive(Debug, Clone)]
pub struct VisitedSet {
    bits: Vec<u64>,
    count: usize,
}

impl VisitedSet {
    pub fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
            count: 0,
        }
    }

    #[inline]
    pub fn contains(&self, id: LocalId) -> bool {
        self.bits[id as usize / 64] >> (id % 64) & 1 == 1
    }

    /// Returns `true` if `id` was not yet present.
    #[inline]
    pub fn insert(&mut self, id: LocalId) -> bool {
        let w = &mut self.bits[id as usize / 64];
        let mask = 1u64 << (id % 64);
        if *w & mask != 0 {
            return false;
        }
        *w |= mask;
        self.count += 1;
        true
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
        self.count = 0;
    }
}

/// Per-search instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Expansion iterations performed (initial seeding excluded).
    pub iterations: u64,
    pub distance_computations: u64,
    /// Neighbor slots fetched from expanded parents, after selection.
    pub total_visits: u64,
    pub nodes_expanded: u64,
    /// Neighbor slots dropped by neighbor selection.
    pub dgs_skipped: u64,
    /// New ids admitted into the queue, summed over merges.
    pub inserted: u64,
}

impl Counters {
    pub fn add(&mut self, other: &Counters) {
        self.iterations += other.iterations;
        self.distance_computations += other.distance_computations;
        self.total_visits += other.total_visits;
        self.nodes_expanded += other.nodes_expanded;
        self.dgs_skipped += other.dgs_skipped;
        self.inserted += other.inserted;
    }
}

#[derive(Debug, Clone)]
pub struct SearchState {
    pub queue: Vec<QueueEntry>,
    pub candidates: Vec<LocalId>,
    pub visited: VisitedSet,
    pub counters: Counters,
}

impl SearchState {
    /// Fresh state: a queue of `l` dummies.
    pub fn new(l: usize, m: usize, n: usize) -> Self {
        Self {
            queue: vec![QueueEntry::dummy(); l],
            candidates: Vec::with_capacity(m),
            visited: VisitedSet::new(n),
            counters: Counters::default(),
        }
    }
}

/// Merges scored candidates into the queue, keeping the best `l` by
/// `(distance, id)`. Ids already queued (or repeated in the batch) are
/// ignored. Returns how many new ids made it into the queue.
pub fn merge_and_sort(state: &mut SearchState, scored: &[(LocalId, f32)]) -> usize {
    let cap = state.queue.len();
    let mut all: Vec<(QueueEntry, bool)> = state
        .queue
        .iter()
        .filter(|e| !e.is_dummy())
        .map(|&e| (e, false))
        .collect();
    let existing = all.len();
    for &(id, dist) in scored {
        if all.iter().any(|(e, _)| e.id == id) {
            continue;
        }
        all.push((
            QueueEntry {
                id,
                dist,
                expanded: false,
            },
            true,
        ));
    }
    if all.len() == existing {
        return 0;
    }
    all.sort_by(|(a, _), (b, _)| rank_cmp(a.dist, a.id, b.dist, b.id));
    all.truncate(cap);
    let inserted = all.iter().filter(|(_, fresh)| *fresh).count();
    state.queue.clear();
    state.queue.extend(all.into_iter().map(|(e, _)| e));
    state.queue.resize(cap, QueueEntry::dummy());
    inserted
}

/// The best `r` queue entries not yet expanded, in rank order.
pub fn select_parents(state: &SearchState, r: usize) -> Vec<LocalId> {
    state
        .queue
        .iter()
        .filter(|e| !e.is_dummy() && !e.expanded)
        .take(r)
        .map(|e| e.id)
        .collect()
}

fn mark_expanded(state: &mut SearchState, id: LocalId) {
    if let Some(e) = state.queue.iter_mut().find(|e| e.id == id) {
        e.expanded = true;
    }
}

/// Every node whose distance was computed, and the queue at termination.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VisitLog {
    pub visited: Vec<LocalId>,
    pub survivors: Vec<LocalId>,
    pub top_k: Vec<LocalId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub query_id: u32,
    /// Top-k with global ids and true (non-squared) distances.
    pub neighbors: Vec<Neighbor>,
    /// Local ids of `neighbors`, same order.
    pub local_ids: Vec<LocalId>,
    pub converged: bool,
    pub counters: Counters,
    pub visit_log: Option<VisitLog>,
}

/// One query against one graph.
#[derive(Debug, Clone, Copy)]
pub struct SearchRequest<'a> {
    pub query: &'a [f32],
    pub query_id: u32,
    /// Stage tag mixed into the query's random stream.
    pub stage: u64,
    /// Entry points placed first in the initial candidate buffer.
    pub seeds: &'a [LocalId],
}

enum Selection {
    Full,
    Direction(f64),
    Random(f64),
}

pub fn search(view: &GraphView<'_>, req: &SearchRequest<'_>, params: &SearchParams) -> Result<SearchResult> {
    params.validate()?;
    let n = view.graph.len();
    if n == 0 || view.data.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if view.data.len() != n {
        return Err(Error::ShardMismatch(alloc::format!(
            "graph has {n} nodes, data has {}",
            view.data.len()
        )));
    }
    let d = view.data.dim();
    if req.query.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: req.query.len(),
        });
    }
    if let Some(&bad) = req.seeds.iter().find(|&&s| s as usize >= n) {
        return Err(Error::InvalidNode { id: bad, len: n });
    }
    if params.dgs.is_some_and(|p| p.strategy == SelectionStrategy::Direction) && view.directions.is_none() {
        return Err(Error::Missing("direction table"));
    }

    let mut rng = rng::query_stream(params.seed, req.query_id as u64, req.stage);
    let mut state = SearchState::new(params.l, params.m, n);
    let mut log = params.log_visits.then(VisitLog::default);
    let mut scored: Vec<(LocalId, f32)> = Vec::with_capacity(params.m);

    // Initial buffer: seeds first, then distinct random nodes.
    for &s in req.seeds {
        if state.candidates.len() < params.m && state.visited.insert(s) {
            state.candidates.push(s);
        }
    }
    let need = params.m - state.candidates.len();
    if need > 0 {
        let amount = (need + state.candidates.len()).min(n);
        for i in index::sample(&mut rng, n, amount) {
            if state.candidates.len() == params.m {
                break;
            }
            let id = i as LocalId;
            if state.visited.insert(id) {
                state.candidates.push(id);
            }
        }
    }
    score(view, req.query, &mut state, &mut scored, log.as_mut());
    merge_scored(&mut state, &scored);

    let w = words_for(d);
    let mut qbits = vec![0u32; w];
    let degree = view.graph.degree();
    let mut converged = false;
    for it in 0..params.max_iter {
        // Fetch neighbors of the top-r unexpanded entries.
        let parents = select_parents(&state, params.r);
        if parents.is_empty() {
            converged = true;
            break;
        }
        let selection = match params.dgs {
            Some(p) if !in_cooldown(it, params.max_iter, p.cooldown_ratio) => match p.strategy {
                SelectionStrategy::Direction => Selection::Direction(p.discard_ratio),
                SelectionStrategy::Random => Selection::Random(p.discard_ratio),
            },
            _ => Selection::Full,
        };
        state.candidates.clear();
        if let Some(cap) = params.visited_capacity {
            if state.visited.len() >= cap {
                state.visited.clear();
                for e in state.queue.iter().filter(|e| !e.is_dummy()) {
                    state.visited.insert(e.id);
                }
            }
        }
        'parents: for &p in &parents {
            let nbrs = view.graph.neighbors(p);
            let slots: Vec<usize> = match selection {
                Selection::Full => (0..degree).collect(),
                Selection::Direction(ratio) => {
                    let table = view.directions.expect("checked above");
                    pack_signs(view.data.row(p as usize), req.query, &mut qbits);
                    select_neighbors(&qbits, table.row(p), degree, d, ratio)
                }
                Selection::Random(ratio) => select_random(&mut rng, degree, ratio),
            };
            state.counters.total_visits += slots.len() as u64;
            state.counters.dgs_skipped += (degree - slots.len()) as u64;
            for s in slots {
                let v = nbrs[s];
                if state.visited.contains(v) {
                    continue;
                }
                if state.candidates.len() == params.m {
                    // Buffer full: this parent stays unexpanded and is
                    // fetched again next iteration.
                    break 'parents;
                }
                state.visited.insert(v);
                state.candidates.push(v);
            }
            mark_expanded(&mut state, p);
            state.counters.nodes_expanded += 1;
        }
        // Score and merge.
        score(view, req.query, &mut state, &mut scored, log.as_mut());
        let inserted = merge_scored(&mut state, &scored);
        state.counters.iterations += 1;
        if inserted == 0 {
            converged = true;
            break;
        }
    }

    let top: Vec<QueueEntry> = state
        .queue
        .iter()
        .filter(|e| !e.is_dummy())
        .take(params.k)
        .copied()
        .collect();
    if let Some(log) = log.as_mut() {
        log.survivors = state.queue.iter().filter(|e| !e.is_dummy()).map(|e| e.id).collect();
        log.top_k = top.iter().map(|e| e.id).collect();
    }
    Ok(SearchResult {
        query_id: req.query_id,
        neighbors: top
            .iter()
            .map(|e| Neighbor {
                id: view.data.global_id(e.id as usize),
                distance: libm::sqrtf(e.dist),
            })
            .collect(),
        local_ids: top.iter().map(|e| e.id).collect(),
        converged,
        counters: state.counters,
        visit_log: log,
    })
}

fn score(
    view: &GraphView<'_>,
    query: &[f32],
    state: &mut SearchState,
    scored: &mut Vec<(LocalId, f32)>,
    log: Option<&mut VisitLog>,
) {
    scored.clear();
    scored.extend(
        state
            .candidates
            .iter()
            .map(|&v| (v, l2_squared(query, view.data.row(v as usize)))),
    );
    state.counters.distance_computations += scored.len() as u64;
    if let Some(log) = log {
        log.visited.extend(state.candidates.iter().copied());
    }
}

fn merge_scored(state: &mut SearchState, scored: &[(LocalId, f32)]) -> usize {
    let inserted = merge_and_sort(state, scored);
    state.counters.inserted += inserted as u64;
    inserted
}

/// Ranks by `(distance, id)`; exposed for reductions elsewhere.
pub fn neighbor_cmp(a: &Neighbor, b: &Neighbor) -> Ordering {
    rank_cmp(a.distance, a.id, b.distance, b.id)
}
