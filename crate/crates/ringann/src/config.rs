//! Run configuration: defaults, TOML files, validation and conversion into
//! core parameter types.
//!
//! A config file is flat TOML, one `key = value` per field of
//! [`RunConfig`]; unknown keys are rejected. Command-line flags override
//! file values.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ringann_core::ghost::default_ghost_degree;
use ringann_core::metrics::RetainedBasis;
use ringann_core::pipeline::{BuildParams, GhostBuild, Mode, PipelineParams, StageSeeding};
use ringann_core::search::{DgsParams, GhostParams, SearchParams, SelectionStrategy};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Baseline,
    Pipelined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArg {
    Direction,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SeedingArg {
    EntryPlusRandom,
    EntryPlusNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RetainedArg {
    Queue,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed: partition, ghost sampling, generator and search streams.
    pub seed: u64,
    pub threads: usize,

    // Synthetic data.
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    pub spread: f32,
    pub num_queries: usize,

    // Index build.
    pub shards: usize,
    pub degree: usize,
    /// Ghost sampling ratio; no ghost graphs when absent.
    pub ghost_ratio: Option<f64>,
    /// Ghost out-degree; `min(degree, 16)` when absent.
    pub ghost_degree: Option<usize>,
    pub directions: bool,
    pub inter_shard: bool,

    // Search.
    pub mode: ModeArg,
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub r: usize,
    pub max_iter: usize,
    /// Ghost-graph budget; ghost staging is off when absent.
    pub ghost_max_iter: Option<usize>,
    /// Neighbor discard ratio; neighbor selection is off when absent.
    pub discard_ratio: Option<f64>,
    pub cooldown: f64,
    pub selection: SelectionArg,
    pub seeding: SeedingArg,
    pub forward_count: usize,
    pub visited_capacity: Option<usize>,
    pub log_visits: bool,
    pub retained: RetainedArg,

    // Paths.
    pub base: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            n: 10_000,
            d: 32,
            clusters: 64,
            spread: 0.25,
            num_queries: 1000,
            shards: 1,
            degree: 64,
            ghost_ratio: Some(0.01),
            ghost_degree: None,
            directions: true,
            inter_shard: true,
            mode: ModeArg::Baseline,
            k: 10,
            l: 64,
            m: 64,
            r: 8,
            max_iter: 64,
            ghost_max_iter: None,
            discard_ratio: None,
            cooldown: 0.3,
            selection: SelectionArg::Direction,
            seeding: SeedingArg::EntryPlusRandom,
            forward_count: 1,
            visited_capacity: None,
            log_visits: true,
            retained: RetainedArg::Queue,
            base: None,
            queries: None,
            index: None,
            truth: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config file", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { reason, .. } => Error::config(path.display().to_string(), reason),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Pipelined => Mode::Pipelined,
        }
    }

    pub fn retained_basis(&self) -> RetainedBasis {
        match self.retained {
            RetainedArg::Queue => RetainedBasis::Queue,
            RetainedArg::TopK => RetainedBasis::TopK,
        }
    }

    pub fn ghost_build(&self) -> Option<GhostBuild> {
        self.ghost_ratio.map(|ratio| GhostBuild {
            ratio,
            degree: self.ghost_degree.unwrap_or_else(|| default_ghost_degree(self.degree)),
        })
    }

    pub fn build_params(&self) -> BuildParams {
        BuildParams {
            shards: self.shards,
            degree: self.degree,
            ghost: self.ghost_build(),
            directions: self.directions,
            inter_shard: self.inter_shard,
            seed: self.seed,
        }
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            k: self.k,
            l: self.l,
            m: self.m,
            r: self.r,
            max_iter: self.max_iter,
            seed: self.seed,
            dgs: self.discard_ratio.map(|discard_ratio| DgsParams {
                discard_ratio,
                cooldown_ratio: self.cooldown,
                strategy: match self.selection {
                    SelectionArg::Direction => SelectionStrategy::Direction,
                    SelectionArg::Random => SelectionStrategy::Random,
                },
            }),
            ghost: self.ghost_max_iter.map(|max_iter| GhostParams { max_iter }),
            visited_capacity: self.visited_capacity,
            log_visits: self.log_visits,
        }
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            seeding: match self.seeding {
                SeedingArg::EntryPlusRandom => StageSeeding::EntryPlusRandom,
                SeedingArg::EntryPlusNeighbors => StageSeeding::EntryPlusNeighbors,
            },
            forward_count: self.forward_count,
            ..PipelineParams::new(self.search_params())
        }
    }

    /// Field-level checks; the first violation is reported.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| if ok { Ok(()) } else { Err(Error::config(field, reason)) };
        check(self.threads >= 1, "threads", "must be at least 1")?;
        check(self.d >= 1, "d", "must be at least 1")?;
        check(self.clusters >= 1 && self.clusters <= self.n, "clusters", "need 1 <= clusters <= n")?;
        check(self.spread > 0.0 && self.spread.is_finite(), "spread", "must be positive and finite")?;
        check(self.shards >= 1, "shards", "must be at least 1")?;
        check(self.degree >= 1, "degree", "must be at least 1")?;
        if let Some(rho) = self.ghost_ratio {
            check(rho > 0.0 && rho <= 1.0, "ghost_ratio", "must lie in (0, 1]")?;
        }
        if let Some(g) = self.ghost_degree {
            check(g >= 1, "ghost_degree", "must be at least 1")?;
        }
        check(self.k >= 1 && self.k <= self.l, "k", "need 1 <= k <= l")?;
        check(self.r >= 1 && self.r <= self.l, "r", "need 1 <= r <= l")?;
        check(self.m >= 1, "m", "must be at least 1")?;
        check(self.max_iter >= 1, "max_iter", "must be at least 1")?;
        if let Some(g) = self.ghost_max_iter {
            check(g >= 1, "ghost_max_iter", "must be at least 1")?;
        }
        if let Some(x) = self.discard_ratio {
            check((0.0..1.0).contains(&x), "discard_ratio", "must lie in [0, 1)")?;
        }
        check((0.0..=1.0).contains(&self.cooldown), "cooldown", "must lie in [0, 1]")?;
        check(self.forward_count >= 1 && self.forward_count <= self.k, "forward_count", "need 1 <= forward_count <= k")?;
        if let Some(c) = self.visited_capacity {
            check(c >= 1, "visited_capacity", "must be positive")?;
        }
        self.pipeline_params().validate()?;
        Ok(())
    }

    pub fn require<'a>(&self, field: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| Error::config(field, "path required"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.degree, c.k, c.cooldown), (64, 10, 0.3));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig { shards: 4, discard_ratio: Some(0.5), mode: ModeArg::Pipelined, ..Default::default() };
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let partial = RunConfig::from_toml_str("k = 5\nmode = \"pipelined\"\n").unwrap();
        assert_eq!((partial.k, partial.mode, partial.l), (5, ModeArg::Pipelined, 64));
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        let err = RunConfig { k: 100, ..Default::default() }.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "k"), "{err}");
        assert!(RunConfig { ghost_ratio: Some(0.0), ..Default::default() }.validate().is_err());
        assert!(RunConfig { discard_ratio: Some(1.0), ..Default::default() }.validate().is_err());
    }
}
