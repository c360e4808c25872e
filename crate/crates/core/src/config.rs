//! JSON scenario files and scenario construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{PredictionSetup, Scenario, Seeds, DEFAULT_WARMUP_FRACTION};
use crate::error::{PlacementError, TopologyError, WorkloadError};
use crate::ids::ContainerId;
use crate::placement::{random_place, t_heron_place, Deployment, DEFAULT_CONTAINER_CAPACITY};
use crate::prediction::{assign_window_sizes, ForecastTable, PredictionScheme, WindowMode};
use crate::scheduler::SchedulerConfig;
use crate::topology::{
    build_fat_tree, build_jellyfish, cost_matrix, generate_apps, AppGenSpec, AppSpec, CapacityDefaults, StreamSystem,
};
use crate::workload::{
    calibrate_rates, expected_rates, poisson_stream, spout_rates_from_apps, stability_violations, trace_stream,
    ArrivalStream, Workload, DEFAULT_LAMBDA_MAX,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClusterConfig {
    FatTree {
        k: usize,
        servers: usize,
        #[serde(default = "default_containers_per_server")]
        containers_per_server: usize,
        seed: u64,
    },
    Jellyfish {
        switches: usize,
        degree: usize,
        servers: usize,
        #[serde(default = "default_containers_per_server")]
        containers_per_server: usize,
        seed: u64,
    },
}

fn default_containers_per_server() -> usize {
    2
}

impl ClusterConfig {
    fn seed(&self) -> u64 {
        match self {
            ClusterConfig::FatTree { seed, .. } | ClusterConfig::Jellyfish { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppsConfig {
    Generate(AppGenSpec),
    Explicit { apps: Vec<AppSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementConfig {
    THeron {
        #[serde(default = "default_capacity")]
        capacity: usize,
    },
    Random {
        #[serde(default = "default_capacity")]
        capacity: usize,
        seed: u64,
    },
    Explicit {
        container_of: Vec<usize>,
        #[serde(default = "default_capacity")]
        capacity: usize,
    },
}

fn default_capacity() -> usize {
    DEFAULT_CONTAINER_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadConfig {
    /// Either a fixed `rate` for every spout stream, or a target bolt
    /// `utilization` from which per-application rates are derived.
    Poisson {
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        utilization: Option<f64>,
        #[serde(default = "default_lambda_max")]
        lambda_max: u32,
        seed: u64,
    },
    /// One trace shared by every stream, each replaying from its own offset.
    Trace {
        path: PathBuf,
        #[serde(default = "one")]
        bin_width: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "default_lambda_max")]
        lambda_max: u32,
        seed: u64,
    },
}

fn default_lambda_max() -> u32 {
    DEFAULT_LAMBDA_MAX
}
fn one() -> f64 {
    1.0
}

impl WorkloadConfig {
    pub fn lambda_max(&self) -> u32 {
        match self {
            WorkloadConfig::Poisson { lambda_max, .. } | WorkloadConfig::Trace { lambda_max, .. } => *lambda_max,
        }
    }

    pub fn seed_mut(&mut self) -> &mut u64 {
        match self {
            WorkloadConfig::Poisson { seed, .. } | WorkloadConfig::Trace { seed, .. } => seed,
        }
    }

    fn seed(&self) -> u64 {
        match self {
            WorkloadConfig::Poisson { seed, .. } | WorkloadConfig::Trace { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub scheme: PredictionScheme,
    #[serde(rename = "W_mean")]
    pub w_mean: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cluster: ClusterConfig,
    pub apps: AppsConfig,
    pub placement: PlacementConfig,
    pub workload: WorkloadConfig,
    pub scheduler: SchedulerConfig,
    pub prediction: PredictionConfig,
    pub horizon: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub metrics_staleness: usize,
    /// Bolt transmission capacity per unit of `mu` and successor.
    #[serde(default = "default_bolt_tx_factor")]
    pub bolt_tx_factor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}
fn default_bolt_tx_factor() -> u32 {
    CapacityDefaults::default().bolt_tx_factor
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        // relative file references are resolved against the config's folder
        let base = path.parent().unwrap_or(Path::new("."));
        if let WorkloadConfig::Trace { path: p, .. } = &mut cfg.workload {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let PredictionScheme::Replay { path: p } = &mut cfg.prediction.scheme {
            let pb = PathBuf::from(&*p);
            if pb.is_relative() {
                *p = base.join(pb).display().to_string();
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        self.scheduler.validate().map_err(ConfigError::Invalid)?;
        self.prediction.scheme.validate().map_err(ConfigError::Invalid)?;
        match &self.workload {
            WorkloadConfig::Poisson { rate, utilization, .. } => match (rate, utilization) {
                (Some(r), None) if r.is_finite() && *r >= 0.0 => {}
                (None, Some(u)) if *u > 0.0 && u.is_finite() => {}
                _ => return bad("poisson workload needs exactly one of a non-negative `rate` or a positive `utilization`".into()),
            },
            WorkloadConfig::Trace { bin_width, scale, .. } => {
                if !(*bin_width > 0.0 && bin_width.is_finite()) || !(*scale >= 0.0 && scale.is_finite()) {
                    return bad("trace bin_width must be positive and scale non-negative".into());
                }
            }
        }
        if self.workload.lambda_max() == 0 {
            return bad("lambda_max must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            cluster: self.cluster.seed(),
            apps: match &self.apps {
                AppsConfig::Generate(g) => g.seed,
                AppsConfig::Explicit { .. } => 0,
            },
            placement: match &self.placement {
                PlacementConfig::Random { seed, .. } => *seed,
                _ => 0,
            },
            workload: self.workload.seed(),
            prediction: self.prediction.seed,
            scheduler: self.scheduler.rng_seed,
        }
    }

    /// Shifts the seeds that vary between replications.
    pub fn offset_seeds(&mut self, by: u64) {
        let s = self.workload.seed_mut();
        *s = s.wrapping_add(by);
        self.prediction.seed = self.prediction.seed.wrapping_add(by);
        self.scheduler.rng_seed = self.scheduler.rng_seed.wrapping_add(by);
    }

    /// A randomized multi-application scenario on a small fat-tree.
    pub fn example(seed: u64) -> Self {
        ScenarioConfig {
            cluster: ClusterConfig::FatTree {
                k: 4,
                servers: 16,
                containers_per_server: 2,
                seed,
            },
            apps: AppsConfig::Generate(AppGenSpec::with_seed(seed)),
            placement: PlacementConfig::THeron {
                capacity: DEFAULT_CONTAINER_CAPACITY,
            },
            workload: WorkloadConfig::Poisson {
                rate: None,
                utilization: Some(0.7),
                lambda_max: DEFAULT_LAMBDA_MAX,
                seed: seed.wrapping_add(1),
            },
            scheduler: SchedulerConfig {
                rng_seed: seed.wrapping_add(2),
                ..SchedulerConfig::potus(5.0, 1.0)
            },
            prediction: PredictionConfig {
                enabled: true,
                scheme: PredictionScheme::Perfect,
                w_mean: 2,
                window_mode: WindowMode::Sampled,
                seed: seed.wrapping_add(3),
            },
            horizon: 5000,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            metrics_staleness: 0,
            bolt_tx_factor: default_bolt_tx_factor(),
            output_dir: None,
        }
    }
}

fn stream_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Builds everything a run needs.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    cfg.validate()?;
    let lambda_max = cfg.workload.lambda_max();
    let (cluster, per_server) = match &cfg.cluster {
        ClusterConfig::FatTree {
            k,
            servers,
            containers_per_server,
            seed,
        } => (build_fat_tree(*k, *servers, *seed)?, *containers_per_server),
        ClusterConfig::Jellyfish {
            switches,
            degree,
            servers,
            containers_per_server,
            seed,
        } => (build_jellyfish(*switches, *degree, *servers, *seed)?, *containers_per_server),
    };
    if per_server == 0 {
        return Err(ConfigError::Invalid("containers_per_server must be positive".into()));
    }
    let cluster = cluster.with_containers(per_server);
    let hosts = cluster.containers.clone();
    let costs = cost_matrix(&cluster, &hosts)?;

    let specs = match &cfg.apps {
        AppsConfig::Generate(g) => generate_apps(g),
        AppsConfig::Explicit { apps } => apps.clone(),
    };
    if specs.is_empty() {
        return Err(ConfigError::Invalid("no applications".into()));
    }
    let defaults = CapacityDefaults {
        lambda_max,
        bolt_tx_factor: cfg.bolt_tx_factor,
    };
    let system = StreamSystem::from_specs(&specs, defaults)?;

    let max_window = match cfg.prediction.window_mode {
        WindowMode::Fixed => cfg.prediction.w_mean,
        WindowMode::Sampled => 2 * cfg.prediction.w_mean,
    };
    let len = cfg.horizon as usize + max_window + 2;
    let mut streams = Vec::new();
    let spout_rates: Vec<f64>;
    match &cfg.workload {
        WorkloadConfig::Poisson {
            rate, utilization, seed, ..
        } => {
            let per_app = match (rate, utilization) {
                (Some(r), _) => vec![*r; system.apps.len()],
                (None, Some(u)) => calibrate_rates(&system, *u),
                (None, None) => unreachable!("validated"),
            };
            spout_rates = spout_rates_from_apps(&system, &per_app);
            for (i, &r) in system.spout_instances().zip(&spout_rates) {
                for &c in system.successors(i) {
                    let values = poisson_stream(r, lambda_max, stream_seed(*seed, streams.len()), len);
                    streams.push(ArrivalStream::new(i, c, values, 0)?);
                }
            }
        }
        WorkloadConfig::Trace {
            path,
            bin_width,
            scale,
            seed,
            ..
        } => {
            let values = trace_stream(path, *bin_width, *scale, lambda_max)?;
            if values.is_empty() {
                return Err(WorkloadError::NoWorkload.into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let spouts: Vec<_> = system.spout_instances().collect();
            for &i in &spouts {
                for &c in system.successors(i) {
                    let offset = rng.random_range(0..values.len());
                    streams.push(ArrivalStream::new(i, c, values.clone(), offset)?);
                }
            }
            let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
            spout_rates = vec![mean; spouts.len()];
        }
    }
    let workload = Workload { streams };
    let rates = expected_rates(&system, &spout_rates);
    stability_violations(&system, &rates);

    let deployment = match &cfg.placement {
        PlacementConfig::THeron { capacity } => t_heron_place(&system, &rates, &costs, &hosts, *capacity)?,
        PlacementConfig::Random { capacity, seed } => random_place(&system, &hosts, *capacity, *seed)?,
        PlacementConfig::Explicit { container_of, capacity } => Deployment::explicit(
            &system,
            container_of.iter().map(|&k| ContainerId(k)).collect(),
            hosts.clone(),
            *capacity,
        )?,
    };

    let windows = assign_window_sizes(
        system.apps.len(),
        cfg.prediction.w_mean,
        cfg.prediction.window_mode,
        cfg.prediction.seed,
    );
    let replay = match &cfg.prediction.scheme {
        PredictionScheme::Replay { path } => Some(Arc::new(ForecastTable::load(Path::new(path))?)),
        _ => None,
    };

    Ok(Scenario {
        system,
        cluster,
        deployment,
        costs,
        workload,
        windows,
        prediction: PredictionSetup {
            enabled: cfg.prediction.enabled,
            scheme: cfg.prediction.scheme.clone(),
            seed: cfg.prediction.seed,
            replay,
        },
        scheduler: cfg.scheduler.clone(),
        horizon: cfg.horizon,
        warmup_fraction: cfg.warmup_fraction,
        lambda_max,
        metrics_staleness: cfg.metrics_staleness,
        seeds: cfg.seeds(),
        config_hash: cfg.hash(),
    })
}
