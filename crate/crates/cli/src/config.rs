//! Run configuration.
//!
//! A TOML file with a top-level `frequency` and optional sections; unknown
//! keys are rejected. Relative paths resolve against the config file's
//! directory.
//!
//! ```toml
//! frequency = "quarterly"          # yearly | quarterly | monthly
//!
//! [paths]
//! train_csv = "Quarterly-train.csv"  # required by `prepare`
//! info_csv = "M4-info.csv"           # optional; fills categories
//! out_dir = "out"                    # default "out"
//! dataset = "out/dataset.json"       # default <out_dir>/dataset.json
//!
//! [profile]        # overrides of the frequency defaults
//! seasonality = 4
//! horizon = 8
//! input_window = 12
//! dilations = [[1, 2], [4, 8]]
//! hidden_size = 40
//! min_length = 72
//!
//! [train]
//! epochs = 15
//! batch_size = 512                 # 1..=2048
//! learning_rate_network = 1e-3
//! learning_rate_per_series = 1e-2
//! tau = 0.5
//! gradient_clip = 20.0             # omit to disable
//! seed = 0
//! attach_states = true
//! patience = 3                     # omit to run every epoch
//! min_delta = 0.0
//!
//! [benchmark]
//! batch_size = 256
//! max_series = 1000                # omit to use every series
//! repeats = 1                      # fastest of n alternating runs per path
//! ```
//!
//! A run manifest (`manifest.json`) is also accepted: its `config` block is
//! used as is.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use esrnn_core::{Frequency, FrequencyProfile, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_csv: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            train_csv: None,
            info_csv: None,
            out_dir: default_out_dir(),
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seasonality: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilations: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_series: Option<usize>,
    pub repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            batch_size: 256,
            max_series: None,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frequency: Frequency,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub profile: ProfileOverrides,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    pub fn new(frequency: Frequency) -> Self {
        RunConfig {
            frequency,
            paths: PathsConfig::default(),
            profile: ProfileOverrides::default(),
            train: TrainConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config or a run manifest (`.json`) and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let manifest: crate::commands::Manifest =
                serde_json::from_str(&text).with_context(|| format!("reading manifest {}", path.display()))?;
            manifest.config
        } else {
            RunConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?
        };
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        p.train_csv.as_mut().map(fix);
        p.info_csv.as_mut().map(fix);
        fix(&mut p.out_dir);
        p.dataset.as_mut().map(fix);
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.resolved_profile()?;
        self.train.validate()?;
        if self.benchmark.batch_size == 0 || self.benchmark.batch_size > esrnn_core::train::MAX_BATCH_SIZE {
            bail!("benchmark.batch_size must be in 1..={}", esrnn_core::train::MAX_BATCH_SIZE);
        }
        if self.benchmark.repeats == 0 {
            bail!("benchmark.repeats must be >= 1");
        }
        Ok(())
    }

    /// Frequency defaults with the `[profile]` overrides applied.
    pub fn resolved_profile(&self) -> anyhow::Result<FrequencyProfile> {
        let mut p = FrequencyProfile::for_frequency(self.frequency);
        let o = &self.profile;
        if let Some(v) = o.seasonality {
            p.seasonality = v;
        }
        if let Some(v) = o.horizon {
            p.horizon = v;
        }
        if let Some(v) = o.input_window {
            p.input_window = v;
        }
        if let Some(v) = &o.dilations {
            p.dilations = v.clone();
        }
        if let Some(v) = o.hidden_size {
            p.hidden_size = v;
        }
        if let Some(v) = o.min_length {
            p.min_length = v;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.paths.out_dir.join("dataset.json"))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}
