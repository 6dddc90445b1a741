//! Run-level accounting: discarded visits, per-stage summaries, the
//! memory-traffic / communication cost model, and budget sweeps.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::oracle::recall_at_k;
use crate::pipeline::{Mode, PipelineParams, PipelineResult, ID_BYTES};
use crate::search::VisitLog;
use crate::GlobalId;

/// What counts as "retained" when classifying visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetainedBasis {
    /// Survivors of the final size-`l` priority queue.
    #[default]
    Queue,
    /// Only the returned top-k.
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VisitClass {
    pub total: u64,
    pub discarded: u64,
}

impl VisitClass {
    pub fn retained(&self) -> u64 {
        self.total - self.discarded
    }
}

/// Splits the nodes whose distance was computed into retained and
/// discarded ones.
pub fn classify_visits(log: Option<&VisitLog>, basis: RetainedBasis) -> Result<VisitClass> {
    let log = log.ok_or(Error::LoggingDisabled)?;
    let mut keep: Vec<u32> = match basis {
        RetainedBasis::Queue => log.survivors.clone(),
        RetainedBasis::TopK => log.top_k.clone(),
    };
    keep.sort_unstable();
    let discarded = log
        .visited
        .iter()
        .filter(|id| keep.binary_search(id).is_err())
        .count();
    Ok(VisitClass {
        total: log.visited.len() as u64,
        discarded: discarded as u64,
    })
}

/// Aggregated counters of one run. `merge` is associative and commutative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub total_visits: u64,
    pub discarded_visits: u64,
    pub retained_visits: u64,
    pub distance_computations: u64,
    /// Per stage: realized iteration count -> number of searches.
    pub iteration_histograms: Vec<BTreeMap<u64, u64>>,
    pub comm_bytes: u64,
    pub queries: u64,
    pub recall_sum: f64,
    pub wall_time_secs: f64,
}

impl RunMetrics {
    pub fn merge(&mut self, other: &RunMetrics) {
        self.total_visits += other.total_visits;
        self.discarded_visits += other.discarded_visits;
        self.retained_visits += other.retained_visits;
        self.distance_computations += other.distance_computations;
        if self.iteration_histograms.len() < other.iteration_histograms.len() {
            self.iteration_histograms.resize(other.iteration_histograms.len(), BTreeMap::new());
        }
        for (mine, theirs) in self.iteration_histograms.iter_mut().zip(&other.iteration_histograms) {
            for (&it, &c) in theirs {
                *mine.entry(it).or_default() += c;
            }
        }
        self.comm_bytes += other.comm_bytes;
        self.queries += other.queries;
        self.recall_sum += other.recall_sum;
        self.wall_time_secs = self.wall_time_secs.max(other.wall_time_secs);
    }

    pub fn discarded_ratio(&self) -> f64 {
        if self.total_visits == 0 {
            0.0
        } else {
            self.discarded_visits as f64 / self.total_visits as f64
        }
    }

    pub fn mean_recall(&self) -> Option<f64> {
        (self.queries > 0).then(|| self.recall_sum / self.queries as f64)
    }

    /// Builds metrics from a pipeline run. Visit classification needs
    /// logged visits; without them the visit fields stay zero.
    pub fn from_result(result: &PipelineResult, basis: RetainedBasis, truth: Option<&[Vec<GlobalId>]>, k: usize) -> Result<Self> {
        let mut m = RunMetrics {
            iteration_histograms: alloc::vec![BTreeMap::new(); result.num_shards],
            comm_bytes: result.total_comm_bytes(),
            ..Default::default()
        };
        for q in &result.queries {
            for s in &q.stages {
                let c = &s.counters;
                m.distance_computations += c.distance_computations;
                if let Some(g) = &s.ghost {
                    m.distance_computations += g.distance_computations;
                }
                *m.iteration_histograms[s.stage as usize].entry(c.iterations).or_default() += 1;
                if s.visit_log.is_some() {
                    let v = classify_visits(s.visit_log.as_ref(), basis)?;
                    m.total_visits += v.total;
                    m.discarded_visits += v.discarded;
                    m.retained_visits += v.retained();
                }
            }
        }
        if let Some(truth) = truth {
            if truth.len() != result.queries.len() {
                return Err(invalid("truth", "one ground-truth row per query required"));
            }
            for (q, t) in result.queries.iter().zip(truth) {
                let ids: Vec<GlobalId> = q.top_k.iter().map(|n| n.id).collect();
                m.recall_sum += recall_at_k(t, &ids, k)?;
            }
            m.queries = result.queries.len() as u64;
        }
        Ok(m)
    }
}

/// Per-stage aggregates for the metrics file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageSummary {
    pub iterations_mean: f64,
    /// Main plus ghost iterations, averaged.
    pub total_iterations_mean: f64,
    pub distance_computations: u64,
    pub inserted_counts: u64,
    /// Bytes forwarded after this stage, all links.
    pub comm_bytes: u64,
}

pub fn stage_summaries(result: &PipelineResult) -> Vec<StageSummary> {
    let n = result.num_shards;
    let mut out = alloc::vec![StageSummary::default(); n];
    let mut counts = alloc::vec![0u64; n];
    for q in &result.queries {
        for s in &q.stages {
            let st = &mut out[s.stage as usize];
            let ghost_it = s.ghost.map_or(0, |g| g.iterations);
            st.iterations_mean += s.counters.iterations as f64;
            st.total_iterations_mean += (s.counters.iterations + ghost_it) as f64;
            st.distance_computations += s.counters.distance_computations + s.ghost.map_or(0, |g| g.distance_computations);
            st.inserted_counts += s.counters.inserted;
            counts[s.stage as usize] += 1;
        }
    }
    for (st, &c) in out.iter_mut().zip(&counts) {
        if c > 0 {
            st.iterations_mean /= c as f64;
            st.total_iterations_mean /= c as f64;
        }
    }
    for m in &result.messages {
        out[m.stage as usize].comm_bytes += m.bytes;
    }
    out
}

/// Predicted memory traffic and communication of a run next to the
/// measured communication.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub queries: u64,
    pub degree: u64,
    pub dim: u64,
    pub mean_iterations: f64,
    pub elem_bytes: u64,
    pub idx_bytes: u64,
    /// `I * J * Q * v * b_elem` with `I` the measured mean iterations per
    /// stage, summed over stages.
    pub predicted_traffic_bytes: f64,
    /// `Q * b_idx` per forwarding stage.
    pub predicted_comm_bytes: u64,
    pub measured_comm_bytes: u64,
}

impl CostReport {
    pub fn comm_matches(&self) -> bool {
        self.predicted_comm_bytes == self.measured_comm_bytes
    }
}

pub fn cost_model_report(result: &PipelineResult, degree: usize, dim: usize) -> CostReport {
    let q = result.queries.len() as u64;
    let stages = stage_summaries(result);
    let mean_iterations = if stages.is_empty() {
        0.0
    } else {
        stages.iter().map(|s| s.iterations_mean).sum::<f64>() / stages.len() as f64
    };
    let elem_bytes = core::mem::size_of::<f32>() as u64;
    let predicted_traffic_bytes = stages
        .iter()
        .map(|s| s.iterations_mean * degree as f64 * q as f64 * dim as f64 * elem_bytes as f64)
        .sum();
    let forwarding_stages = match result.mode {
        Mode::Baseline => 0,
        Mode::Pipelined => result.num_shards.saturating_sub(1) as u64,
    };
    let idx_bytes = ID_BYTES * result.forward_count as u64;
    CostReport {
        queries: q,
        degree: degree as u64,
        dim: dim as u64,
        mean_iterations,
        elem_bytes,
        idx_bytes,
        predicted_traffic_bytes,
        predicted_comm_bytes: forwarding_stages * q * idx_bytes,
        measured_comm_bytes: result.total_comm_bytes(),
    }
}

/// One row of a budget sweep, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: usize,
    pub recall: f64,
    pub dist_comps: f64,
    pub total_visits: f64,
    pub discarded_ratio: f64,
    pub comm_bytes: f64,
    /// Mean realized iterations per query (main + ghost, all stages).
    pub iterations: f64,
}

/// Runs `run` at every budget for every seed and averages. `truth` holds
/// the exact top-k ids per query.
pub fn sweep<F>(
    base: &PipelineParams,
    budgets: &[usize],
    seeds: &[u64],
    truth: &[Vec<GlobalId>],
    basis: RetainedBasis,
    mut run: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&PipelineParams) -> Result<PipelineResult>,
{
    if truth.is_empty() {
        return Err(Error::Missing("ground truth"));
    }
    if seeds.is_empty() {
        return Err(invalid("seeds", "at least one seed required"));
    }
    let k = base.search.k;
    budgets
        .iter()
        .map(|&budget| {
            let mut acc = SweepRow {
                budget,
                recall: 0.0,
                dist_comps: 0.0,
                total_visits: 0.0,
                discarded_ratio: 0.0,
                comm_bytes: 0.0,
                iterations: 0.0,
            };
            for &seed in seeds {
                let mut p = base.clone();
                p.search.max_iter = budget;
                p.search.seed = seed;
                p.search.log_visits = true;
                p.stage_budgets = None;
                let res = run(&p)?;
                let m = RunMetrics::from_result(&res, basis, Some(truth), k)?;
                let nq = res.queries.len() as f64;
                acc.recall += m.mean_recall().unwrap_or(0.0);
                acc.dist_comps += m.distance_computations as f64 / nq;
                acc.total_visits += m.total_visits as f64 / nq;
                acc.discarded_ratio += m.discarded_ratio();
                acc.comm_bytes += m.comm_bytes as f64;
                let its: u64 = res
                    .queries
                    .iter()
                    .flat_map(|q| &q.stages)
                    .map(|s| s.counters.iterations + s.ghost.map_or(0, |g| g.iterations))
                    .sum();
                acc.iterations += its as f64 / nq;
            }
            let s = seeds.len() as f64;
            acc.recall /= s;
            acc.dist_comps /= s;
            acc.total_visits /= s;
            acc.discarded_ratio /= s;
            acc.comm_bytes /= s;
            acc.iterations /= s;
            Ok(acc)
        })
        .collect()
}
