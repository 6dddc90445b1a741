//! Output files: result lists, the metrics document, sweep CSV and run
//! manifests.
//!
//! Metrics document (`schema_version` 1), a JSON object with:
//! `schema_version`, `run_seed`, `mode`, `num_shards`, `num_queries`, `k`,
//! `stages` (parallel arrays indexed by stage: `iterations_mean`,
//! `total_iterations_mean`, `distance_computations`, `inserted_counts`,
//! `comm_bytes`, `iteration_histogram`), `totals` (`total_visits`,
//! `discarded_visits`, `retained_visits`, `discarded_ratio`,
//! `distance_computations`, `comm_bytes`, `recall` or null), `cost_model`,
//! `wall_time_secs`, `index_checksum` and `config`.

use std::path::{Path, PathBuf};

use ringann_core::metrics::{cost_model_report, stage_summaries, RunMetrics, SweepRow};
use ringann_core::pipeline::{Mode, PipelineResult};
use ringann_core::Dataset;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::vecio::{save_fvecs, save_ivecs, IntMatrix};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Top-k ids and distances per query, as an ivecs/fvecs pair.
pub fn result_matrices(result: &PipelineResult, k: usize) -> Result<(IntMatrix, Dataset)> {
    let mut ids = Vec::with_capacity(result.queries.len() * k);
    let mut dists = Vec::with_capacity(result.queries.len() * k);
    for q in &result.queries {
        if q.top_k.len() < k {
            return Err(Error::Core(ringann_core::Error::KOutOfRange {
                k,
                available: q.top_k.len(),
            }));
        }
        for n in &q.top_k[..k] {
            ids.push(n.id as i32);
            dists.push(n.distance);
        }
    }
    Ok((IntMatrix::new(k, ids), Dataset::new(k, dists)?))
}

pub fn save_results(result: &PipelineResult, k: usize, ids_path: &Path, dists_path: &Path) -> Result<()> {
    let (ids, dists) = result_matrices(result, k)?;
    save_ivecs(&ids, ids_path)?;
    save_fvecs(&dists, dists_path)
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Baseline => "baseline",
        Mode::Pipelined => "pipelined",
    }
}

/// Everything in the metrics document except wall time is a pure
/// function of the run's inputs.
pub fn metrics_document(
    result: &PipelineResult,
    metrics: &RunMetrics,
    config: &RunConfig,
    degree: usize,
    dim: usize,
    index_checksum: Option<u32>,
) -> Value {
    let stages = stage_summaries(result);
    let cost = cost_model_report(result, degree, dim);
    let hist: Vec<Value> = metrics
        .iteration_histograms
        .iter()
        .map(|h| Value::Object(h.iter().map(|(it, c)| (it.to_string(), json!(c))).collect()))
        .collect();
    json!({
        "schema_version": METRICS_SCHEMA_VERSION,
        "run_seed": config.seed,
        "mode": mode_name(result.mode),
        "num_shards": result.num_shards,
        "num_queries": result.queries.len(),
        "k": config.k,
        "stages": {
            "iterations_mean": stages.iter().map(|s| s.iterations_mean).collect::<Vec<_>>(),
            "total_iterations_mean": stages.iter().map(|s| s.total_iterations_mean).collect::<Vec<_>>(),
            "distance_computations": stages.iter().map(|s| s.distance_computations).collect::<Vec<_>>(),
            "inserted_counts": stages.iter().map(|s| s.inserted_counts).collect::<Vec<_>>(),
            "comm_bytes": stages.iter().map(|s| s.comm_bytes).collect::<Vec<_>>(),
            "iteration_histogram": hist,
        },
        "totals": {
            "total_visits": metrics.total_visits,
            "discarded_visits": metrics.discarded_visits,
            "retained_visits": metrics.retained_visits,
            "discarded_ratio": metrics.discarded_ratio(),
            "distance_computations": metrics.distance_computations,
            "comm_bytes": metrics.comm_bytes,
            "link_bytes": result.link_bytes,
            "recall": metrics.mean_recall(),
        },
        "cost_model": {
            "mean_iterations": cost.mean_iterations,
            "predicted_traffic_bytes": cost.predicted_traffic_bytes,
            "predicted_comm_bytes": cost.predicted_comm_bytes,
            "measured_comm_bytes": cost.measured_comm_bytes,
            "comm_matches": cost.comm_matches(),
        },
        "wall_time_secs": metrics.wall_time_secs,
        "index_checksum": index_checksum.map(checksum_hex),
        "config": serde_json::to_value(config).expect("config serializes"),
    })
}

pub fn checksum_hex(crc: u32) -> String {
    format!("{crc:08x}")
}

pub fn write_json(value: &Value, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One CSV record; field order is the file's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub budget: usize,
    pub recall: f64,
    pub dist_comps: f64,
    pub total_visits: f64,
    pub discarded_ratio: f64,
    pub comm_bytes: f64,
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        Self {
            budget: r.budget,
            recall: r.recall,
            dist_comps: r.dist_comps,
            total_visits: r.total_visits,
            discarded_ratio: r.discarded_ratio,
            comm_bytes: r.comm_bytes,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(SweepRecord::from(r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Worker(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// Path of the manifest written next to `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Records how `outputs` were produced: command, full configuration, seed
/// and the checksum of the index used (if any). Contains nothing that
/// varies between identical runs.
pub fn write_manifest(
    command: &str,
    config: &RunConfig,
    index_checksum: Option<u32>,
    outputs: &[&Path],
) -> Result<()> {
    let doc = json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool": env!("CARGO_PKG_NAME"),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "run_seed": config.seed,
        "index_checksum": index_checksum.map(checksum_hex),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "config": serde_json::to_value(config)?,
    });
    for out in outputs {
        write_json(&doc, &manifest_path(out))?;
    }
    Ok(())
}
