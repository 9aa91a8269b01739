//! Subcommand implementations. Each writes its artifacts under the
//! configured output directory and returns a short summary for stdout.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use esrnn_core::data::{attach_info, equalize_lengths, parse_info_csv, parse_m4_train_csv, LengthStats};
use esrnn_core::metrics::{mase, seasonal_naive, smape, ForecastReport, ForecastRow};
use esrnn_core::train::{benchmark_repeated, BenchmarkReport, EpochRecord, ForecastRequest};
use esrnn_core::{Error, Frequency, FrequencyProfile, Model, SeriesRecord, Trainer, TrainingSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const DATASET_FORMAT: &str = "esrnn-dataset";
pub const LOG_HEADER: &str = "epoch\ttrain_pinball\tval_smape\tseconds";

/// Output of `prepare`: equal-length series for one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub format: String,
    pub frequency: Frequency,
    pub profile: FrequencyProfile,
    pub series: Vec<SeriesRecord>,
}

impl Dataset {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading dataset {} (run `prepare` first)", path.display()))?;
        let d: Dataset = serde_json::from_str(&text).with_context(|| format!("parsing dataset {}", path.display()))?;
        if d.format != DATASET_FORMAT {
            bail!("{} is not a prepared dataset", path.display());
        }
        Ok(d)
    }

    /// Training set under `profile`, which must be the one the data was prepared with.
    pub fn training_set(&self, profile: &FrequencyProfile) -> anyhow::Result<TrainingSet> {
        if self.profile != *profile {
            bail!("dataset was prepared with a different profile; rerun `prepare`");
        }
        Ok(TrainingSet::new(profile.clone(), &self.series)?)
    }
}

/// Counts and raw-length statistics from `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub frequency: Frequency,
    pub read: usize,
    pub other_frequency: usize,
    pub non_positive: usize,
    pub too_short: usize,
    pub kept: usize,
    pub equalized_len: usize,
    /// Lengths of the raw series of the selected frequency.
    pub raw_lengths: Option<LengthStats>,
}

impl PrepareStats {
    pub fn dropped(&self) -> usize {
        self.non_positive + self.too_short
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "frequency\t{}\nread\t{}\nother_frequency\t{}\nkept\t{}\ndropped\t{}\ndropped_non_positive\t{}\ndropped_too_short\t{}\nequalized_length\t{}\n",
            self.frequency.name(),
            self.read,
            self.other_frequency,
            self.kept,
            self.dropped(),
            self.non_positive,
            self.too_short,
            self.equalized_len
        );
        s.push_str("\nraw length statistics\n");
        s.push_str("count\tmean\tstd\tmin\t25%\t50%\t75%\tmax\n");
        match &self.raw_lengths {
            Some(l) => s.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{}\t{}\t{}\t{}\t{}\n",
                l.count, l.mean, l.std_dev, l.min, l.q25, l.q50, l.q75, l.max
            )),
            None => s.push_str("0\t-\t-\t-\t-\t-\t-\t-\n"),
        }
        s
    }
}

/// Git blob hash (`sha256("blob <len>\0" + bytes)`), hex encoded.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(blob_hash(&bytes))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_prepare(cfg: &RunConfig) -> anyhow::Result<PrepareStats> {
    let profile = cfg.resolved_profile()?;
    let Some(train_csv) = &cfg.paths.train_csv else {
        bail!("paths.train_csv is required for prepare");
    };
    let text = fs::read_to_string(train_csv).with_context(|| format!("reading {}", train_csv.display()))?;
    let mut records = parse_m4_train_csv(&text).with_context(|| format!("parsing {}", train_csv.display()))?;
    if let Some(info_csv) = &cfg.paths.info_csv {
        let text = fs::read_to_string(info_csv).with_context(|| format!("reading {}", info_csv.display()))?;
        let info = parse_info_csv(&text).with_context(|| format!("parsing {}", info_csv.display()))?;
        attach_info(&mut records, &info);
    }

    let read = records.len();
    let (selected, other): (Vec<SeriesRecord>, Vec<SeriesRecord>) =
        records.into_iter().partition(|r| r.frequency.map_or(true, |f| f == cfg.frequency));
    let raw_lengths = LengthStats::from_lengths(&selected.iter().map(SeriesRecord::len).collect::<Vec<_>>());
    let (positive, non_positive): (Vec<SeriesRecord>, Vec<SeriesRecord>) =
        selected.into_iter().partition(|r| r.validate().is_ok());
    let mut kept = equalize_lengths(&positive, &profile);
    for r in &mut kept {
        r.frequency = Some(cfg.frequency);
    }
    let stats = PrepareStats {
        frequency: cfg.frequency,
        read,
        other_frequency: other.len(),
        non_positive: non_positive.len(),
        too_short: positive.len() - kept.len(),
        kept: kept.len(),
        equalized_len: profile.equalized_len(),
        raw_lengths,
    };
    if kept.is_empty() {
        return Err(Error::NoSeries.into());
    }
    let dataset = Dataset {
        format: DATASET_FORMAT.into(),
        frequency: cfg.frequency,
        profile,
        series: kept,
    };
    write_file(&cfg.dataset_path(), &serde_json::to_string(&dataset)?)?;
    write_file(&cfg.out_path("prepare_stats.txt"), &stats.to_text())?;
    log::info!("prepared {} series ({} dropped)", stats.kept, stats.dropped());
    Ok(stats)
}

/// Metrics recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub final_train_pinball: Option<f64>,
    pub best_val_smape: Option<f64>,
    pub stopped_early: bool,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    /// Input path to git-style blob hash.
    pub inputs: BTreeMap<String, String>,
    pub checkpoint: String,
    pub checkpoint_hash: String,
    pub metrics: FinalMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub manifest: Manifest,
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<TrainSummary> {
    let profile = cfg.resolved_profile()?;
    let dataset_path = cfg.dataset_path();
    let dataset = Dataset::load(&dataset_path)?;
    let set = dataset.training_set(&profile)?;
    let seed = cfg.train.seed;
    let model = Model::init(&set, seed)?;

    fs::create_dir_all(&cfg.paths.out_dir).with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    let log_path = cfg.out_path("train_log.tsv");
    let mut log_file = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log_file, "{LOG_HEADER}")?;
    log_file.flush()?;

    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let outcome = trainer
        .fit(&set, |r| {
            writeln!(log_file, "{}", log_line(r)).and_then(|_| log_file.flush()).map_err(Error::from)
        })
        .context("training failed (log up to the failing epoch kept)")?;

    let checkpoint = cfg.out_path("checkpoint.json");
    let ckpt_text = outcome.best_model.to_checkpoint_json()?;
    write_file(&checkpoint, &ckpt_text)?;

    let mut inputs = BTreeMap::new();
    inputs.insert(dataset_path.display().to_string(), file_hash(&dataset_path)?);
    for p in [&cfg.paths.train_csv, &cfg.paths.info_csv].into_iter().flatten() {
        if p.exists() {
            inputs.insert(p.display().to_string(), file_hash(p)?);
        }
    }
    let best_val = outcome
        .best_epoch
        .map(|e| outcome.history[e - 1].val_smape);
    let manifest = Manifest {
        config: cfg.clone(),
        seed,
        inputs,
        checkpoint: checkpoint.display().to_string(),
        checkpoint_hash: blob_hash(ckpt_text.as_bytes()),
        metrics: FinalMetrics {
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            final_train_pinball: outcome.history.last().map(|r| r.train_pinball),
            best_val_smape: best_val,
            stopped_early: outcome.stopped_early,
        },
    };
    write_file(&cfg.out_path("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(TrainSummary { checkpoint, manifest })
}

/// Tab-separated log line; losses in shortest round-trip form.
pub fn log_line(r: &EpochRecord) -> String {
    format!("{}\t{}\t{}\t{:.3}", r.epoch, r.train_pinball, r.val_smape, r.seconds)
}

fn checkpoint_path(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.out_path("checkpoint.json"), Path::to_path_buf)
}

/// Loads a checkpoint and checks it against the configured profile.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<(Model, FrequencyProfile)> {
    let path = checkpoint_path(cfg, checkpoint);
    let text = fs::read_to_string(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let model = Model::from_checkpoint_json(&text).with_context(|| format!("loading {}", path.display()))?;
    let profile = cfg.resolved_profile()?;
    model.check_compatible(&profile)?;
    Ok((model, profile))
}

/// Scores the test segment, forecasting from train + validation, against
/// the seasonal-naive baseline.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<ForecastReport> {
    let (model, profile) = load_model(cfg, checkpoint)?;
    let set = Dataset::load(&cfg.dataset_path())?.training_set(&profile)?;
    model.check_series(&set)?;
    let histories: Vec<Vec<f64>> = set.series.iter().map(|s| s.split.history_for_test()).collect();
    let requests: Vec<ForecastRequest> = set
        .series
        .iter()
        .zip(&histories)
        .enumerate()
        .map(|(i, (s, h))| ForecastRequest {
            series: i,
            history: h,
            category: s.category,
        })
        .collect();
    let forecasts = model.forecast(&requests)?;

    let season = profile.seasonality;
    let mut rows = Vec::with_capacity(set.len());
    for ((s, history), forecast) in set.series.iter().zip(&histories).zip(forecasts) {
        let actual = &s.split.test;
        let baseline = seasonal_naive(history, season, profile.horizon)?;
        rows.push(ForecastRow {
            id: s.id.clone(),
            category: s.category,
            frequency: profile.frequency,
            smape: smape(actual, &forecast)?,
            mase: mase(history, actual, &forecast, season).ok(),
            baseline_smape: Some(smape(actual, &baseline)?),
            baseline_mase: mase(history, actual, &baseline, season).ok(),
            forecast,
            actual: actual.clone(),
        });
    }
    let report = ForecastReport::new(rows)?;
    write_file(&cfg.out_path("report.txt"), &report.to_text())?;
    write_file(&cfg.out_path("report.csv"), &report.to_csv())?;
    write_file(&cfg.out_path("report.json"), &report.to_json()?)?;
    Ok(report)
}

/// Real-scale forecasts past the end of each full series. `ids` selects and
/// orders the rows; by default every series in dataset order. Values may be
/// negative if the network output is.
pub fn cmd_forecast(cfg: &RunConfig, checkpoint: Option<&Path>, ids: Option<&[String]>) -> anyhow::Result<PathBuf> {
    let (model, profile) = load_model(cfg, checkpoint)?;
    let dataset = Dataset::load(&cfg.dataset_path())?;
    let positions: Vec<usize> = match ids {
        None => (0..dataset.series.len()).collect(),
        Some(ids) => {
            let missing: Vec<String> = ids
                .iter()
                .filter(|id| !dataset.series.iter().any(|s| &s.id == *id) || model.index_of(id).is_none())
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(Error::UnknownIds(missing).into());
            }
            ids.iter()
                .map(|id| dataset.series.iter().position(|s| &s.id == id).expect("checked above"))
                .collect()
        }
    };
    let mut requests = Vec::with_capacity(positions.len());
    for &p in &positions {
        let s = &dataset.series[p];
        let series = model
            .index_of(&s.id)
            .ok_or_else(|| Error::UnknownIds(vec![s.id.clone()]))?;
        requests.push(ForecastRequest {
            series,
            history: &s.values,
            category: s.category_or_other(),
        });
    }
    let forecasts = model.forecast(&requests)?;

    let mut out = String::from("id");
    for k in 1..=profile.horizon {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for (&p, f) in positions.iter().zip(&forecasts) {
        out.push_str(&dataset.series[p].id);
        for v in f {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let path = cfg.out_path("forecast.csv");
    write_file(&path, &out)?;
    Ok(path)
}

/// Times one gradient epoch batched vs one window at a time on the first
/// `benchmark.max_series` series with freshly initialized weights.
pub fn cmd_benchmark(cfg: &RunConfig) -> anyhow::Result<BenchmarkReport> {
    let profile = cfg.resolved_profile()?;
    let mut set = Dataset::load(&cfg.dataset_path())?.training_set(&profile)?;
    if let Some(n) = cfg.benchmark.max_series {
        if n == 0 {
            bail!("benchmark.max_series must be positive");
        }
        set.series.truncate(n);
    }
    let model = Model::init(&set, cfg.train.seed)?;
    let report = benchmark_repeated(&model, &set, cfg.benchmark.batch_size, &cfg.train, cfg.benchmark.repeats)?;
    write_file(&cfg.out_path("benchmark.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
