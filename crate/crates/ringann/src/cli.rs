//! `ringann` subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use ringann_core::metrics::{sweep, RunMetrics};
use ringann_core::oracle::{exact_knn, recall_at_k};
use ringann_core::vecdata::{gen_synthetic, SyntheticSpec};
use ringann_core::Dataset;
use serde_json::json;

use crate::config::{ModeArg, RetainedArg, RunConfig, SeedingArg, SelectionArg};
use crate::error::{Error, Result};
use crate::index_file::{load_index, save_index};
use crate::parallel::{build_index, pool};
use crate::report::{metrics_document, save_results, sweep_csv, write_json, write_manifest};
use crate::ring;
use crate::vecio::{load_fvecs, load_id_rows, save_fvecs, save_ivecs, IntMatrix};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate clustered base and query vectors from one draw.
    Gen(GenArgs),
    /// Exact top-k ground truth (ids as ivecs, distances as fvecs).
    Truth(TruthArgs),
    /// Partition, build graphs and auxiliary tables, write an index file.
    Build(BuildArgs),
    /// Search an index; writes results and a metrics document.
    Search(SearchArgs),
    /// Recall@k of a results file against ground truth.
    Eval(EvalArgs),
    /// Budget sweep averaged over seeds, written as CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compute threads; 1 runs the sequential drivers.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub spread: Option<f32>,
    #[arg(long)]
    pub num_queries: Option<usize>,
    /// Base vectors output (fvecs).
    #[arg(long, env = "RINGANN_BASE")]
    pub base: Option<PathBuf>,
    /// Query vectors output (fvecs).
    #[arg(long, env = "RINGANN_QUERIES")]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(long, env = "RINGANN_BASE")]
    pub base: Option<PathBuf>,
    #[arg(long, env = "RINGANN_QUERIES")]
    pub queries: Option<PathBuf>,
    /// Neighbors per query [default: 10].
    #[arg(long)]
    pub k: Option<usize>,
    /// Output prefix: writes `<out>.ivecs` and `<out>.fvecs`.
    #[arg(long, env = "RINGANN_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, env = "RINGANN_BASE")]
    pub base: Option<PathBuf>,
    /// Index file to write.
    #[arg(long, env = "RINGANN_INDEX")]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub shards: Option<usize>,
    /// Graph out-degree [default: 64].
    #[arg(long)]
    pub degree: Option<usize>,
    /// Ghost sampling ratio [default: 0.01].
    #[arg(long)]
    pub ghost_ratio: Option<f64>,
    /// Ghost out-degree [default: min(degree, 16)].
    #[arg(long)]
    pub ghost_degree: Option<usize>,
    #[arg(long)]
    pub no_ghost: bool,
    #[arg(long)]
    pub no_directions: bool,
    #[arg(long)]
    pub no_inter_shard: bool,
}

#[derive(Debug, Args)]
pub struct SearchFlags {
    #[arg(long, env = "RINGANN_INDEX")]
    pub index: Option<PathBuf>,
    #[arg(long, env = "RINGANN_QUERIES")]
    pub queries: Option<PathBuf>,
    /// Ground-truth ids (ivecs); adds recall to the metrics.
    #[arg(long, env = "RINGANN_TRUTH")]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Results per query [default: 10].
    #[arg(long)]
    pub k: Option<usize>,
    /// Priority-queue size [default: 64].
    #[arg(long)]
    pub l: Option<usize>,
    /// Candidate-buffer size [default: 64].
    #[arg(long)]
    pub m: Option<usize>,
    /// Parents per iteration [default: 8].
    #[arg(long)]
    pub r: Option<usize>,
    /// Iteration budget per stage [default: 64].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Enables ghost staging with this ghost budget.
    #[arg(long)]
    pub ghost_iter: Option<usize>,
    /// Enables neighbor selection at this discard ratio.
    #[arg(long)]
    pub discard_ratio: Option<f64>,
    /// Full-expansion tail of the budget [default: 0.3].
    #[arg(long)]
    pub cooldown: Option<f64>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    #[arg(long, value_enum)]
    pub seeding: Option<SeedingArg>,
    /// Results forwarded between stages [default: 1].
    #[arg(long)]
    pub forward_count: Option<usize>,
    #[arg(long)]
    pub visited_capacity: Option<usize>,
    #[arg(long, value_enum)]
    pub retained: Option<RetainedArg>,
    /// Skip visit logging (no discarded-visit accounting).
    #[arg(long)]
    pub no_visit_log: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub flags: SearchFlags,
    /// Output prefix: `<out>.ivecs`, `<out>.fvecs`, `<out>.metrics.json`.
    #[arg(long, env = "RINGANN_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result ids (ivecs).
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, env = "RINGANN_TRUTH")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Also write the report as JSON here.
    #[arg(long, env = "RINGANN_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub flags: SearchFlags,
    /// Comma-separated iteration budgets.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    pub budgets: Vec<usize>,
    /// Seeds averaged per budget, starting at the run seed.
    #[arg(long, default_value_t = 3)]
    pub num_seeds: u64,
    /// CSV output path.
    #[arg(long, env = "RINGANN_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "ringann", version, about = "Sharded, pipelined proximity-graph search")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

macro_rules! set {
    ($cfg:ident, $args:expr, $($field:ident),+) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v.into(); } )+
    };
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set!(cfg, common, seed, threads);
    Ok(cfg)
}

fn apply_search_flags(cfg: &mut RunConfig, f: &SearchFlags) {
    set!(cfg, f, mode, k, l, m, r, max_iter, cooldown, selection, seeding, forward_count, retained);
    if f.index.is_some() {
        cfg.index = f.index.clone();
    }
    if f.queries.is_some() {
        cfg.queries = f.queries.clone();
    }
    if f.truth.is_some() {
        cfg.truth = f.truth.clone();
    }
    if f.ghost_iter.is_some() {
        cfg.ghost_max_iter = f.ghost_iter;
    }
    if f.discard_ratio.is_some() {
        cfg.discard_ratio = f.discard_ratio;
    }
    if f.visited_capacity.is_some() {
        cfg.visited_capacity = f.visited_capacity;
    }
    if f.no_visit_log {
        cfg.log_visits = false;
    }
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(ext);
    PathBuf::from(s)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let full = match Cli::try_parse_from(args) {
        Ok(f) => f,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            return Err(Error::config("arguments", line.trim_start_matches("error: ")));
        }
    };
    let mut cfg = base_config(&full.common)?;
    match full.command {
        Command::Gen(a) => cmd_gen(&mut cfg, a),
        Command::Truth(a) => cmd_truth(&mut cfg, a),
        Command::Build(a) => cmd_build(&mut cfg, a),
        Command::Search(a) => cmd_search(&mut cfg, a),
        Command::Eval(a) => cmd_eval(&mut cfg, a),
        Command::Bench(a) => cmd_bench(&mut cfg, a),
    }
}

fn cmd_gen(cfg: &mut RunConfig, a: GenArgs) -> Result<()> {
    set!(cfg, a, n, d, clusters, spread, num_queries);
    if a.base.is_some() {
        cfg.base = a.base;
    }
    if a.queries.is_some() {
        cfg.queries = a.queries;
    }
    cfg.validate()?;
    let base_path = cfg.require("base", &cfg.base)?.to_path_buf();
    let query_path = cfg.require("queries", &cfg.queries)?.to_path_buf();
    if cfg.num_queries == 0 {
        return Err(Error::config("num_queries", "must be at least 1"));
    }
    let all = gen_synthetic(&SyntheticSpec {
        n: cfg.n + cfg.num_queries,
        d: cfg.d,
        n_clusters: cfg.clusters,
        spread: cfg.spread,
        seed: cfg.seed,
    })?;
    let split = cfg.n * cfg.d;
    let base = Dataset::new(cfg.d, all.as_slice()[..split].to_vec())?;
    let queries = Dataset::new(cfg.d, all.as_slice()[split..].to_vec())?;
    save_fvecs(&base, &base_path)?;
    save_fvecs(&queries, &query_path)?;
    write_manifest("gen", cfg, None, &[&base_path, &query_path])?;
    log::info!("wrote {} base and {} query vectors (d = {})", base.len(), queries.len(), cfg.d);
    Ok(())
}

/// Exact top-k for every query, in query order.
pub fn ground_truth(base: &Dataset, queries: &Dataset, k: usize, threads: usize) -> Result<Vec<ringann_core::NeighborList>> {
    if base.dim() != queries.dim() {
        return Err(ringann_core::Error::DimensionMismatch {
            expected: base.dim(),
            got: queries.dim(),
        }
        .into());
    }
    let pool = pool(threads)?;
    let lists = pool.install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|i| exact_knn(base, queries.row(i), i as u32, k))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    Ok(lists)
}

fn cmd_truth(cfg: &mut RunConfig, a: TruthArgs) -> Result<()> {
    set!(cfg, a, k);
    if a.base.is_some() {
        cfg.base = a.base;
    }
    if a.queries.is_some() {
        cfg.queries = a.queries;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    cfg.validate()?;
    let base = load_fvecs(cfg.require("base", &cfg.base)?)?;
    let queries = load_fvecs(cfg.require("queries", &cfg.queries)?)?;
    let out = cfg.require("out", &cfg.out)?;
    let lists = ground_truth(&base, &queries, cfg.k, cfg.threads)?;
    let ids: Vec<i32> = lists.iter().flat_map(|l| l.entries.iter().map(|e| e.id as i32)).collect();
    let dists: Vec<f32> = lists.iter().flat_map(|l| l.entries.iter().map(|e| e.distance)).collect();
    let (ids_path, dists_path) = (with_ext(out, ".ivecs"), with_ext(out, ".fvecs"));
    save_ivecs(&IntMatrix::new(cfg.k, ids), &ids_path)?;
    save_fvecs(&Dataset::new(cfg.k, dists)?, &dists_path)?;
    write_manifest("truth", cfg, None, &[&ids_path, &dists_path])?;
    Ok(())
}

fn cmd_build(cfg: &mut RunConfig, a: BuildArgs) -> Result<()> {
    set!(cfg, a, shards, degree);
    if a.ghost_ratio.is_some() {
        cfg.ghost_ratio = a.ghost_ratio;
    }
    if a.ghost_degree.is_some() {
        cfg.ghost_degree = a.ghost_degree;
    }
    if a.no_ghost {
        cfg.ghost_ratio = None;
    }
    cfg.directions &= !a.no_directions;
    cfg.inter_shard &= !a.no_inter_shard;
    if a.base.is_some() {
        cfg.base = a.base;
    }
    if a.index.is_some() {
        cfg.index = a.index;
    }
    cfg.validate()?;
    let base = load_fvecs(cfg.require("base", &cfg.base)?)?;
    let index_path = cfg.require("index", &cfg.index)?.to_path_buf();
    let (index, timings) = build_index(&base, &cfg.build_params(), cfg.threads)?;
    let crc = save_index(&index, &index_path)?;
    write_manifest("build", cfg, Some(crc), &[&index_path])?;
    print!("{}", timings.report());
    Ok(())
}

struct Loaded {
    index: ringann_core::pipeline::Index,
    crc: u32,
    queries: Dataset,
    truth: Option<Vec<Vec<u32>>>,
}

fn load_for_search(cfg: &RunConfig) -> Result<Loaded> {
    let (index, crc) = load_index(cfg.require("index", &cfg.index)?)?;
    let queries = load_fvecs(cfg.require("queries", &cfg.queries)?)?;
    let truth = match &cfg.truth {
        Some(p) => Some(load_id_rows(p)?),
        None => None,
    };
    Ok(Loaded {
        index,
        crc,
        queries,
        truth,
    })
}

fn cmd_search(cfg: &mut RunConfig, a: SearchArgs) -> Result<()> {
    apply_search_flags(cfg, &a.flags);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    cfg.validate()?;
    let out = cfg.require("out", &cfg.out)?.to_path_buf();
    let l = load_for_search(cfg)?;
    let params = cfg.pipeline_params();
    let clock = Instant::now();
    let result = ring::run(cfg.mode(), &l.index, &l.queries, &params, cfg.threads)?;
    let wall = clock.elapsed().as_secs_f64();
    let mut metrics = RunMetrics::from_result(&result, cfg.retained_basis(), l.truth.as_deref(), cfg.k)?;
    metrics.wall_time_secs = wall;
    let degree = l.index.shards[0].graph.degree();
    let doc = metrics_document(&result, &metrics, cfg, degree, l.index.dim(), Some(l.crc));
    let (ids_path, dists_path, metrics_path) = (with_ext(&out, ".ivecs"), with_ext(&out, ".fvecs"), with_ext(&out, ".metrics.json"));
    save_results(&result, cfg.k, &ids_path, &dists_path)?;
    write_json(&doc, &metrics_path)?;
    write_manifest("search", cfg, Some(l.crc), &[&ids_path, &dists_path, &metrics_path])?;
    if let Some(r) = metrics.mean_recall() {
        log::info!("recall@{} = {r:.4}", cfg.k);
    }
    Ok(())
}

fn cmd_eval(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    set!(cfg, a, k);
    if a.truth.is_some() {
        cfg.truth = a.truth;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let results = load_id_rows(&a.results)?;
    let truth = load_id_rows(cfg.require("truth", &cfg.truth)?)?;
    if results.len() != truth.len() {
        return Err(Error::config(
            "results",
            format!("{} result rows for {} ground-truth rows", results.len(), truth.len()),
        ));
    }
    let mut sum = 0.0;
    for (r, t) in results.iter().zip(&truth) {
        sum += recall_at_k(t, r, cfg.k)?;
    }
    let recall = sum / results.len() as f64;
    let doc = json!({ "k": cfg.k, "queries": results.len(), "recall": recall });
    println!("{doc}");
    if let Some(out) = &cfg.out {
        write_json(&doc, out)?;
        write_manifest("eval", cfg, None, &[out])?;
    }
    Ok(())
}

fn cmd_bench(cfg: &mut RunConfig, a: BenchArgs) -> Result<()> {
    apply_search_flags(cfg, &a.flags);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    cfg.log_visits = true;
    cfg.validate()?;
    if a.budgets.is_empty() || a.budgets.contains(&0) {
        return Err(Error::config("budgets", "need one or more positive budgets"));
    }
    if a.num_seeds == 0 {
        return Err(Error::config("num_seeds", "must be at least 1"));
    }
    let out = cfg.require("out", &cfg.out)?.to_path_buf();
    let l = load_for_search(cfg)?;
    let truth = l.truth.as_ref().ok_or_else(|| Error::config("truth", "bench needs ground truth"))?;
    let seeds: Vec<u64> = (0..a.num_seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mode = cfg.mode();
    let threads = cfg.threads;
    let mut run_err = None;
    let rows = sweep(&cfg.pipeline_params(), &a.budgets, &seeds, truth, cfg.retained_basis(), |p| {
        ring::run(mode, &l.index, &l.queries, p, threads).map_err(|e| {
            let core = match &e {
                Error::Core(c) => c.clone(),
                _ => ringann_core::Error::Missing("run result"),
            };
            run_err = Some(e);
            core
        })
    });
    let rows = match (rows, run_err) {
        (Ok(rows), _) => rows,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e.into()),
    };
    let text = sweep_csv(&rows)?;
    std::fs::write(&out, &text).map_err(|e| Error::io(&out, e))?;
    write_manifest("bench", cfg, Some(l.crc), &[&out])?;
    Ok(())
}
