//! Run settings: built-in defaults, then the `--config` file, then flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use colonmapper::matching::load_match_cache;
use colonmapper::Frame;
use colonmapper::{
    LocalizationConfig, MappingConfig, MatchCache, MatchError, MatchOracle, SessionParams,
    SyntheticMatchParams, SyntheticMatcher, WorldParams,
};
use serde::Deserialize;

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// `key = value` settings file. Keys are the long flag names with `_` for `-`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub skip_similarity: Option<f64>,
    pub max_skips: Option<u32>,
    pub min_matches: Option<u32>,
    pub min_node_images: Option<usize>,
    pub m: Option<usize>,
    pub accept: Option<f64>,
    pub top_k: Option<usize>,
    pub floor: Option<f64>,
    pub query_node_size: Option<usize>,
    pub lost_state: Option<bool>,
    pub parallel: Option<bool>,
    pub seed: Option<u64>,
    pub places: Option<usize>,
    pub regions: Option<usize>,
    pub sessions: Option<usize>,
    pub place_separation: Option<f64>,
    pub dwell_min: Option<usize>,
    pub dwell_max: Option<usize>,
    pub frame_noise: Option<f64>,
    pub frame_correlation: Option<f64>,
    pub session_noise: Option<f64>,
    pub wall_prob: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct MappingFlags {
    /// Skip frames more similar than this to the last added frame.
    #[arg(long)]
    pub skip_similarity: Option<f64>,
    /// Consecutive skips before a match is forced.
    #[arg(long)]
    pub max_skips: Option<u32>,
    /// Matches a frame needs (strictly more) to join a proto-node.
    #[arg(long)]
    pub min_matches: Option<u32>,
    /// Smallest proto-node kept as a map node.
    #[arg(long)]
    pub min_node_images: Option<usize>,
}

impl MappingFlags {
    pub fn resolve(&self, file: &ConfigFile, base: MappingConfig) -> anyhow::Result<MappingConfig> {
        let config = MappingConfig {
            skip_similarity: self
                .skip_similarity
                .or(file.skip_similarity)
                .unwrap_or(base.skip_similarity),
            max_skips: self.max_skips.or(file.max_skips).unwrap_or(base.max_skips),
            min_matches: self
                .min_matches
                .or(file.min_matches)
                .unwrap_or(base.min_matches),
            min_node_images: self
                .min_node_images
                .or(file.min_node_images)
                .unwrap_or(base.min_node_images),
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct LocalizationFlags {
    /// Neighbourhood radius in hops.
    #[arg(long)]
    pub m: Option<usize>,
    /// Window mass a decision must exceed.
    #[arg(long)]
    pub accept: Option<f64>,
    /// Nodes that keep their raw likelihood.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Likelihood of every other state.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Frames per query node.
    #[arg(long)]
    pub query_node_size: Option<usize>,
    /// Drop the lost state.
    #[arg(long)]
    pub no_lost_state: bool,
    /// Score map nodes on all cores.
    #[arg(long)]
    pub parallel: bool,
}

impl LocalizationFlags {
    pub fn resolve(&self, file: &ConfigFile) -> anyhow::Result<LocalizationConfig> {
        let d = LocalizationConfig::default();
        let lost = if self.no_lost_state {
            false
        } else {
            file.lost_state.unwrap_or(d.lost_state_enabled)
        };
        let config = LocalizationConfig {
            m: self.m.or(file.m).unwrap_or(d.m),
            accept_threshold: self.accept.or(file.accept).unwrap_or(d.accept_threshold),
            top_k: self.top_k.or(file.top_k).unwrap_or(d.top_k),
            likelihood_floor: self.floor.or(file.floor).unwrap_or(d.likelihood_floor),
            query_node_size: self
                .query_node_size
                .or(file.query_node_size)
                .unwrap_or(d.query_node_size),
            lost_state_enabled: lost,
            ..d
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    pub fn parallel(&self, file: &ConfigFile) -> bool {
        self.parallel || file.parallel.unwrap_or(false)
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct OracleFlags {
    /// Precomputed match counts (`a b count` per line).
    #[arg(long, value_name = "PATH")]
    pub match_cache: Option<PathBuf>,
    /// Derive match counts from descriptor similarity.
    #[arg(long)]
    pub synthetic_oracle: bool,
    /// Seed of the synthetic oracle's per-pair noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub enum Oracle {
    Cache(MatchCache),
    Synthetic(SyntheticMatcher),
}

impl MatchOracle for Oracle {
    fn match_count(&self, a: &Frame, b: &Frame) -> Result<u32, MatchError> {
        match self {
            Self::Cache(c) => c.match_count(a, b),
            Self::Synthetic(s) => s.match_count(a, b),
        }
    }
}

impl OracleFlags {
    pub fn is_set(&self) -> bool {
        self.match_cache.is_some() || self.synthetic_oracle
    }

    pub fn resolve(&self, file: &ConfigFile) -> anyhow::Result<Oracle> {
        match (&self.match_cache, self.synthetic_oracle) {
            (Some(_), true) => Err(usage(
                "use either --match-cache or --synthetic-oracle, not both",
            )),
            (None, false) => Err(usage(
                "a match source is required: --match-cache or --synthetic-oracle",
            )),
            (Some(path), false) => Ok(Oracle::Cache(load_match_cache(path)?)),
            (None, true) => {
                let params = SyntheticMatchParams {
                    seed: self.seed.or(file.seed).unwrap_or(0),
                    ..Default::default()
                };
                Ok(Oracle::Synthetic(
                    SyntheticMatcher::new(params).map_err(|e| usage(e.to_string()))?,
                ))
            }
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct SynthFlags {
    #[arg(long)]
    pub place_separation: Option<f64>,
    #[arg(long)]
    pub dwell_min: Option<usize>,
    #[arg(long)]
    pub dwell_max: Option<usize>,
    #[arg(long)]
    pub frame_noise: Option<f64>,
    #[arg(long)]
    pub frame_correlation: Option<f64>,
    #[arg(long)]
    pub session_noise: Option<f64>,
    #[arg(long)]
    pub wall_prob: Option<f64>,
}

impl SynthFlags {
    pub fn world(
        &self,
        file: &ConfigFile,
        places: Option<usize>,
        regions: Option<usize>,
        seed: u64,
    ) -> anyhow::Result<WorldParams> {
        let d = WorldParams::default();
        let params = WorldParams {
            n_places: places.or(file.places).unwrap_or(d.n_places),
            n_regions: regions.or(file.regions).unwrap_or(d.n_regions),
            place_separation: self
                .place_separation
                .or(file.place_separation)
                .unwrap_or(d.place_separation),
            seed,
            ..d
        };
        params.validate().map_err(|e| usage(e.to_string()))?;
        Ok(params)
    }

    pub fn session(&self, file: &ConfigFile, seed: u64) -> anyhow::Result<SessionParams> {
        let d = SessionParams::default();
        let params = SessionParams {
            dwell_min: self.dwell_min.or(file.dwell_min).unwrap_or(d.dwell_min),
            dwell_max: self.dwell_max.or(file.dwell_max).unwrap_or(d.dwell_max),
            frame_noise: self
                .frame_noise
                .or(file.frame_noise)
                .unwrap_or(d.frame_noise),
            frame_correlation: self
                .frame_correlation
                .or(file.frame_correlation)
                .unwrap_or(d.frame_correlation),
            session_noise: self
                .session_noise
                .or(file.session_noise)
                .unwrap_or(d.session_noise),
            wall_prob: self.wall_prob.or(file.wall_prob).unwrap_or(d.wall_prob),
            seed,
        };
        params.validate().map_err(|e| usage(e.to_string()))?;
        Ok(params)
    }
}
