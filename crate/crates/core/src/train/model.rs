use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::WindowRef;
use crate::data::{one_hot_category, Category, DatasetSplit, FrequencyProfile, SeriesRecord, NUM_CATEGORIES};
use crate::diff::{forward_stack, Matrix, StackConfig, StackWeights, Tape};
use crate::error::{Error, Result};
use crate::hw::{hybrid_primer, window_count, PerSeriesParams};

/// One series prepared for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSeries {
    pub id: String,
    pub category: Category,
    pub split: DatasetSplit,
}

/// Equal-length series sharing one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub profile: FrequencyProfile,
    pub series: Vec<TrainingSeries>,
}

impl TrainingSet {
    /// Splits every record into train / validation / test. All training
    /// segments must have the same length and hold at least one window.
    pub fn new(profile: FrequencyProfile, records: &[SeriesRecord]) -> Result<Self> {
        profile.validate()?;
        if records.is_empty() {
            return Err(Error::NoSeries);
        }
        let series = records
            .iter()
            .map(|r| {
                r.validate()?;
                Ok(TrainingSeries {
                    id: r.id.clone(),
                    category: r.category_or_other(),
                    split: DatasetSplit::from_values(&r.values, profile.horizon)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let len = series[0].split.train.len();
        if let Some(s) = series.iter().find(|s| s.split.train.len() != len) {
            return Err(Error::Shape(format!(
                "series {:?} has a {}-value training segment, expected {len} (equalize lengths first)",
                s.id,
                s.split.train.len()
            )));
        }
        let needed = (profile.input_window + profile.horizon).max(profile.seasonality);
        if len < needed {
            return Err(Error::InsufficientLength {
                context: "training segment".into(),
                needed,
                got: len,
            });
        }
        Ok(TrainingSet { profile, series })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn train_len(&self) -> usize {
        self.series[0].split.train.len()
    }

    /// Every training window, ordered by series then anchor.
    pub fn windows(&self) -> Vec<WindowRef> {
        let count = window_count(self.train_len(), &self.profile);
        let first = self.profile.input_window - 1;
        (0..self.len())
            .flat_map(|series| (first..first + count).map(move |anchor| WindowRef { series, anchor }))
            .collect()
    }

    /// Keeps only the listed series, in the given order.
    pub fn subset(&self, positions: &[usize]) -> TrainingSet {
        TrainingSet {
            profile: self.profile.clone(),
            series: positions.iter().map(|&i| self.series[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesParamsEntry {
    pub id: String,
    pub params: PerSeriesParams,
}

/// Shared network weights plus the smoothing parameters of every series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub profile: FrequencyProfile,
    pub stack: StackWeights,
    pub series: Vec<SeriesParamsEntry>,
}

/// A forecast request: series position, history and category.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a> {
    pub series: usize,
    pub history: &'a [f64],
    pub category: Category,
}

/// Rows per forward pass when forecasting.
const FORECAST_CHUNK: usize = 2048;

impl Model {
    /// Random network weights from `seed`; per-series seasonality seeded from each series' first cycle.
    pub fn init(set: &TrainingSet, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = StackWeights::init(&StackConfig::from_profile(&set.profile), &mut rng)?;
        let series = set
            .series
            .iter()
            .map(|s| SeriesParamsEntry {
                id: s.id.clone(),
                params: PerSeriesParams::from_history(&s.split.train, set.profile.seasonality),
            })
            .collect();
        Ok(Model {
            profile: set.profile.clone(),
            stack,
            series,
        })
    }

    pub fn stack_config(&self) -> &StackConfig {
        &self.stack.config
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.series.iter().position(|s| s.id == id)
    }

    /// Errors unless the network matches `profile` and every series carries `2 + S` values.
    pub fn check_compatible(&self, profile: &FrequencyProfile) -> Result<()> {
        self.stack.check_layout()?;
        if self.profile != *profile || self.stack.config != StackConfig::from_profile(profile) {
            return Err(Error::CheckpointIncompatible(format!(
                "checkpoint profile {:?} does not match configured {:?}",
                self.profile, profile
            )));
        }
        if let Some(s) = self.series.iter().find(|s| s.params.season() != profile.seasonality) {
            return Err(Error::CheckpointIncompatible(format!(
                "series {:?} has {} seasonal values, profile expects {}",
                s.id,
                s.params.season(),
                profile.seasonality
            )));
        }
        Ok(())
    }

    /// Errors unless the model's series ids match `set` position by position.
    pub fn check_series(&self, set: &TrainingSet) -> Result<()> {
        let same = self.series.len() == set.len() && self.series.iter().zip(&set.series).all(|(m, s)| m.id == s.id);
        if same {
            Ok(())
        } else {
            Err(Error::CheckpointIncompatible("series in checkpoint differ from dataset".into()))
        }
    }

    /// Real-scale `O`-step forecasts from the end of each history: the last
    /// window goes through the network and its output is multiplied by the
    /// last level and the following seasonal coefficients.
    pub fn forecast(&self, requests: &[ForecastRequest]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(FORECAST_CHUNK) {
            out.extend(self.forecast_chunk(chunk)?);
        }
        Ok(out)
    }

    fn forecast_chunk(&self, requests: &[ForecastRequest]) -> Result<Vec<Vec<f64>>> {
        let p = &self.profile;
        let (inp, horizon) = (p.input_window, p.horizon);
        let mut rows = Vec::with_capacity(requests.len() * (inp + NUM_CATEGORIES));
        let mut scales = Vec::with_capacity(requests.len());
        for req in requests {
            let entry = self.series.get(req.series).ok_or_else(|| {
                Error::UnknownIds(vec![format!("series position {}", req.series)])
            })?;
            let len = req.history.len();
            if len < inp {
                return Err(Error::InsufficientLength {
                    context: format!("forecast history of {:?}", entry.id),
                    needed: inp,
                    got: len,
                });
            }
            let state = hybrid_primer(req.history, &entry.params)
                .map_err(|e| Error::NumericDomain(format!("series {:?}: {e}", entry.id)))?;
            let level = state.levels[len - 1];
            let seas_in = state.seasonality_range(len - inp, inp);
            for (y, s) in req.history[len - inp..].iter().zip(&seas_in) {
                rows.push(y / (level * s));
            }
            rows.extend_from_slice(&one_hot_category(req.category));
            scales.push((level, state.seasonality_range(len, horizon)));
        }
        let tape = Tape::new();
        let vars = self.stack.record(&tape, false);
        let x = tape.constant(Matrix::from_vec(requests.len(), inp + NUM_CATEGORIES, rows));
        let y = tape.value(forward_stack(&tape, x, self.stack_config(), &vars)?);
        Ok(scales
            .iter()
            .enumerate()
            .map(|(r, (level, seas))| y.row(r).iter().zip(seas).map(|(v, s)| v * level * s).collect())
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Model> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointIncompatible(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        c.model.check_compatible(&c.model.profile)?;
        Ok(c.model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "esrnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: network parameters by name with shapes and row-major
/// values, plus per-series smoothing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frequency;

    fn small_profile() -> FrequencyProfile {
        FrequencyProfile {
            frequency: Frequency::Quarterly,
            seasonality: 4,
            horizon: 2,
            input_window: 4,
            dilations: vec![vec![1, 2]],
            hidden_size: 3,
            min_length: 8,
        }
    }

    fn records(n: usize) -> Vec<SeriesRecord> {
        (0..n)
            .map(|i| {
                let v = (0..12).map(|t| 10.0 + i as f64 + [1.0, 3.0, -2.0, 0.5][t % 4] + 0.2 * t as f64).collect();
                SeriesRecord::new(format!("S{i}"), Category::ALL[i % 6], Frequency::Quarterly, v)
            })
            .collect()
    }

    #[test]
    fn training_set_windows() {
        let set = TrainingSet::new(small_profile(), &records(3)).unwrap();
        assert_eq!(set.train_len(), 8);
        let w = set.windows();
        assert_eq!(w.len(), 3 * 3);
        assert_eq!(w[0], WindowRef { series: 0, anchor: 3 });
        assert_eq!(w[2], WindowRef { series: 0, anchor: 5 });
        let mut bad = records(2);
        bad[1].values.push(1.0);
        assert!(matches!(TrainingSet::new(small_profile(), &bad), Err(Error::Shape(_))));
        assert!(matches!(TrainingSet::new(small_profile(), &[]), Err(Error::NoSeries)));
    }

    #[test]
    fn zero_network_forecasts_zero() {
        let set = TrainingSet::new(small_profile(), &records(2)).unwrap();
        let mut m = Model::init(&set, 1).unwrap();
        m.stack = StackWeights::zeros(m.stack_config()).unwrap();
        let s = &set.series[0];
        let f = m
            .forecast(&[ForecastRequest {
                series: 0,
                history: &s.split.train,
                category: s.category,
            }])
            .unwrap();
        assert_eq!(f, vec![vec![0.0; 2]]);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let set = TrainingSet::new(small_profile(), &records(2)).unwrap();
        let m = Model::init(&set, 4).unwrap();
        let text = m.to_checkpoint_json().unwrap();
        assert_eq!(Model::from_checkpoint_json(&text).unwrap(), m);
        let mut other = small_profile();
        other.hidden_size = 4;
        assert!(matches!(m.check_compatible(&other), Err(Error::CheckpointIncompatible(_))));
        assert!(Model::from_checkpoint_json(&text.replace("esrnn-checkpoint", "nope")).is_err());
    }
}
