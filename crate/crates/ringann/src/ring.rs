//! Threaded search drivers.
//!
//! Pipelined mode runs one worker thread per shard. Worker `s` owns shard
//! `s`; at stage `t` it serves chunk `(s - t) mod N` and sends the chunk's
//! forwarded entries to worker `s + 1` over a bounded channel. Queries of a
//! chunk are spread over a shared pool. Per-query work is a pure function
//! of its inputs, so the output equals the sequential drivers' exactly.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use rayon::prelude::*;
use ringann_core::pipeline::{
    assemble, check_inputs, check_pipeline_ready, chunk_ranges, entries_for, finish_chunk_stage, run_pipelined,
    run_sharded_baseline, run_stage, ChunkStage, Index, Mode, PipelineParams, PipelineResult, StageMessage,
};
use ringann_core::vecdata::QuerySet;

use crate::error::{Error, Result};
use crate::parallel::pool;

/// Runs `mode` with up to `threads` compute threads. `threads == 1` uses
/// the sequential reference drivers.
pub fn run(mode: Mode, index: &Index, queries: &QuerySet, params: &PipelineParams, threads: usize) -> Result<PipelineResult> {
    if threads == 1 {
        return Ok(match mode {
            Mode::Baseline => run_sharded_baseline(index, queries, params)?,
            Mode::Pipelined => run_pipelined(index, queries, params)?,
        });
    }
    let pool = pool(threads)?;
    match mode {
        Mode::Baseline => baseline(index, queries, params, &pool),
        Mode::Pipelined => pipelined(index, queries, params, &pool),
    }
}

#[allow(clippy::too_many_arguments)]
fn chunk_stage(
    index: &Index,
    queries: &QuerySet,
    params: &PipelineParams,
    pool: &rayon::ThreadPool,
    chunk: usize,
    stage: usize,
    shard: usize,
    range: std::ops::Range<usize>,
    incoming: Option<&StageMessage>,
    n_stages: usize,
) -> Result<ChunkStage> {
    let si = &index.shards[shard];
    let start = range.start;
    let outcomes = pool.install(|| {
        range
            .clone()
            .into_par_iter()
            .map(|qi| {
                let entries = entries_for(incoming, qi - start, params.forward_count);
                run_stage(si, queries.row(qi), qi as u32, stage, entries, params)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(finish_chunk_stage(si, range, chunk, stage, shard, outcomes, params, n_stages)?)
}

fn baseline(index: &Index, queries: &QuerySet, params: &PipelineParams, pool: &rayon::ThreadPool) -> Result<PipelineResult> {
    check_inputs(index, queries, params)?;
    let n = index.num_shards();
    let pieces = (0..n)
        .map(|s| chunk_stage(index, queries, params, pool, 0, s, s, 0..queries.len(), None, 0))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(Mode::Baseline, queries.len(), n, params.search.k, params.forward_count, pieces)?)
}

fn pipelined(index: &Index, queries: &QuerySet, params: &PipelineParams, pool: &rayon::ThreadPool) -> Result<PipelineResult> {
    check_inputs(index, queries, params)?;
    check_pipeline_ready(index)?;
    let n = index.num_shards();
    let chunks = chunk_ranges(queries.len(), n);

    // Channel s carries messages into worker s.
    let mut senders: Vec<Option<SyncSender<StageMessage>>> = Vec::with_capacity(n);
    let mut receivers: Vec<Option<Receiver<StageMessage>>> = Vec::with_capacity(n);
    for _ in 0..n {
        let (tx, rx) = sync_channel(n);
        senders.push(Some(tx));
        receivers.push(Some(rx));
    }

    let worker = |s: usize, rx: Receiver<StageMessage>, tx: SyncSender<StageMessage>| -> Result<Vec<ChunkStage>> {
        let mut pieces = Vec::with_capacity(n);
        for stage in 0..n {
            let chunk = (s + n - stage) % n;
            let incoming = if stage == 0 {
                None
            } else {
                let m = rx
                    .recv()
                    .map_err(|_| Error::Worker(format!("shard {s}: upstream worker stopped")))?;
                if m.stage as usize != stage || m.chunk as usize != chunk {
                    return Err(Error::Worker(format!(
                        "shard {s}: expected chunk {chunk} stage {stage}, got chunk {} stage {}",
                        m.chunk, m.stage
                    )));
                }
                Some(m)
            };
            let piece = chunk_stage(index, queries, params, pool, chunk, stage, s, chunks[chunk].clone(), incoming.as_ref(), n)?;
            if let Some(m) = &piece.message {
                tx.send(m.clone())
                    .map_err(|_| Error::Worker(format!("shard {s}: downstream worker stopped")))?;
            }
            pieces.push(piece);
        }
        Ok(pieces)
    };

    let results: Vec<Result<Vec<ChunkStage>>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|s| {
                let rx = receivers[s].take().expect("one receiver per worker");
                let tx = senders[(s + 1) % n].take().expect("one sender per worker");
                let worker = &worker;
                thread::Builder::new()
                    .name(format!("shard-{s}"))
                    .spawn_scoped(scope, move || worker(s, rx, tx))
                    .expect("spawn worker")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Worker("worker panicked".into()))))
            .collect()
    });

    let mut pieces = Vec::with_capacity(n * n);
    let mut first_err = None;
    for r in results {
        match r {
            Ok(p) => pieces.extend(p),
            // Prefer the root cause over "upstream stopped" follow-ups.
            Err(e) => {
                if first_err.as_ref().is_none_or(|f: &Error| matches!(f, Error::Worker(_))) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(assemble(Mode::Pipelined, queries.len(), n, params.search.k, params.forward_count, pieces)?)
}
