//! Series ingestion and preparation.
//!
//! Reads the M4 distribution layout (a `*-train.csv` with one series per row
//! and an `M4-info.csv` companion), equalizes series lengths per frequency,
//! and splits every series into train / validation / test segments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of M4 sampling categories; width of the category one-hot.
pub const NUM_CATEGORIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Demographic,
    Finance,
    Industry,
    Macro,
    Micro,
    Other,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Demographic,
        Category::Finance,
        Category::Industry,
        Category::Macro,
        Category::Micro,
        Category::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Demographic => "Demographic",
            Category::Finance => "Finance",
            Category::Industry => "Industry",
            Category::Macro => "Macro",
            Category::Micro => "Micro",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownCategory(t.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Yearly,
    Quarterly,
    Monthly,
}

impl Frequency {
    pub const ALL: [Frequency; 3] = [Frequency::Yearly, Frequency::Quarterly, Frequency::Monthly];

    pub fn name(self) -> &'static str {
        match self {
            Frequency::Yearly => "Yearly",
            Frequency::Quarterly => "Quarterly",
            Frequency::Monthly => "Monthly",
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Frequency::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownFrequency(t.to_string()))
    }
}

/// M4 frequencies that exist in the distribution but have no profile here.
const UNSUPPORTED_M4_FREQUENCIES: [&str; 3] = ["Weekly", "Daily", "Hourly"];

/// One univariate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub id: String,
    pub category: Option<Category>,
    pub frequency: Option<Frequency>,
    pub values: Vec<f64>,
}

impl SeriesRecord {
    pub fn new(id: impl Into<String>, category: Category, frequency: Frequency, values: Vec<f64>) -> Self {
        SeriesRecord {
            id: id.into(),
            category: Some(category),
            frequency: Some(frequency),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks the multiplicative-model requirement: non-empty, all values > 0.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InsufficientLength {
                context: format!("series {}", self.id),
                needed: 1,
                got: 0,
            });
        }
        match self.values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            Some(index) => Err(Error::NonPositive {
                id: self.id.clone(),
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    /// Category, falling back to `Other` when no info row was attached.
    pub fn category_or_other(&self) -> Category {
        self.category.unwrap_or(Category::Other)
    }
}

/// Per-frequency configuration of the pipeline and the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub frequency: Frequency,
    /// Periods per seasonal cycle (S).
    pub seasonality: usize,
    /// Forecast horizon (O).
    pub horizon: usize,
    /// Input window length (I).
    pub input_window: usize,
    /// Dilations grouped into residual blocks.
    pub dilations: Vec<Vec<usize>>,
    pub hidden_size: usize,
    /// Training-segment length kept after equalization (C).
    pub min_length: usize,
}

impl FrequencyProfile {
    pub fn for_frequency(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Yearly => FrequencyProfile {
                frequency,
                seasonality: 1,
                horizon: 6,
                input_window: 6,
                dilations: vec![vec![1, 2], vec![2, 6]],
                hidden_size: 30,
                min_length: 13,
            },
            Frequency::Quarterly => FrequencyProfile {
                frequency,
                seasonality: 4,
                horizon: 8,
                input_window: 12,
                dilations: vec![vec![1, 2], vec![4, 8]],
                hidden_size: 40,
                min_length: 72,
            },
            Frequency::Monthly => FrequencyProfile {
                frequency,
                seasonality: 12,
                horizon: 18,
                input_window: 24,
                dilations: vec![vec![1, 3], vec![6, 12]],
                hidden_size: 50,
                min_length: 72,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seasonality < 1 {
            return fail("seasonality must be >= 1".into());
        }
        if self.horizon < 1 {
            return fail("horizon must be >= 1".into());
        }
        if self.input_window < self.seasonality {
            return fail(format!(
                "input window {} shorter than one season ({})",
                self.input_window, self.seasonality
            ));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|b| b.is_empty()) {
            return fail("dilation blocks must be non-empty".into());
        }
        if self.dilations.iter().flatten().any(|&d| d == 0) {
            return fail("dilations must be strictly positive".into());
        }
        if self.hidden_size == 0 {
            return fail("hidden size must be positive".into());
        }
        if self.min_length < self.input_window + self.horizon {
            return fail(format!(
                "min_length {} cannot hold one training window (input {} + horizon {})",
                self.min_length, self.input_window, self.horizon
            ));
        }
        Ok(())
    }

    /// Series length after equalization: C + 2·O.
    pub fn equalized_len(&self) -> usize {
        self.min_length + 2 * self.horizon
    }

    /// Number of learnable per-series smoothing values: 2 + S.
    pub fn per_series_param_count(&self) -> usize {
        2 + self.seasonality
    }
}

/// Train / validation / test segments of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub test: Vec<f64>,
}

impl DatasetSplit {
    pub fn from_values(values: &[f64], horizon: usize) -> Result<Self> {
        let n = values.len();
        let needed = 2 * horizon + 1;
        if n < needed {
            return Err(Error::InsufficientLength {
                context: "train/validation/test split".into(),
                needed,
                got: n,
            });
        }
        let train_end = n - 2 * horizon;
        let val_end = n - horizon;
        Ok(DatasetSplit {
            train: values[..train_end].to_vec(),
            validation: values[train_end..val_end].to_vec(),
            test: values[val_end..].to_vec(),
        })
    }

    /// Train followed by validation: the history used to forecast the test segment.
    pub fn history_for_test(&self) -> Vec<f64> {
        let mut v = self.train.clone();
        v.extend_from_slice(&self.validation);
        v
    }
}

pub fn split_train_val_test(record: &SeriesRecord, horizon: usize) -> Result<DatasetSplit> {
    DatasetSplit::from_values(&record.values, horizon)
}

/// Parses an M4 `*-train.csv`: a header row, then `id,v1,v2,...` rows padded
/// with empty cells. Category and frequency are left unset.
pub fn parse_m4_train_csv(text: &str) -> Result<Vec<SeriesRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let id = row.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: format!("#{}", line + 2),
                column: 1,
                message: "empty series id".into(),
            });
        }
        let mut values = Vec::new();
        for (col, cell) in row.iter().enumerate().skip(1) {
            if cell.is_empty() {
                break;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: id.clone(),
                column: col + 1,
                message: format!("malformed number {cell:?}"),
            })?;
            values.push(v);
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push(SeriesRecord {
            id,
            category: None,
            frequency: None,
            values,
        });
    }
    Ok(out)
}

/// Writes records back in the M4 train layout (header `V1..Vk`, empty padding).
pub fn write_m4_train_csv(records: &[SeriesRecord]) -> String {
    let width = records.iter().map(|r| r.values.len()).max().unwrap_or(0) + 1;
    let mut s = (1..=width).map(|i| format!("V{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in records {
        s.push_str(&r.id);
        for v in &r.values {
            s.push(',');
            s.push_str(&v.to_string());
        }
        for _ in r.values.len() + 1..width {
            s.push(',');
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesInfo {
    pub category: Category,
    pub frequency: Frequency,
}

/// Parses `M4-info.csv`-style rows `id,category,frequency[,...]`.
///
/// A header row is recognised by a `category` cell in the second column; if the
/// header names an `SP` column (the real M4 layout, where `Frequency` is the
/// numeric period) the frequency name is read from it. Rows whose frequency is
/// an M4 frequency without a profile here (weekly, daily, hourly) are skipped.
pub fn parse_info_csv(text: &str) -> Result<BTreeMap<String, SeriesInfo>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut freq_col = 2;
    let mut out = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() == 0 || row.iter().all(str::is_empty) {
            continue;
        }
        if line == 0 && row.get(1).is_some_and(|c| c.eq_ignore_ascii_case("category")) {
            if let Some(i) = row.iter().position(|c| c.eq_ignore_ascii_case("SP")) {
                freq_col = i;
            }
            continue;
        }
        let id = row.get(0).unwrap_or("");
        let (Some(cat), Some(freq)) = (row.get(1), row.get(freq_col)) else {
            return Err(Error::Parse {
                row: id.to_string(),
                column: row.len() + 1,
                message: "expected id, category and frequency columns".into(),
            });
        };
        if UNSUPPORTED_M4_FREQUENCIES.iter().any(|u| u.eq_ignore_ascii_case(freq)) {
            continue;
        }
        let info = SeriesInfo {
            category: cat.parse()?,
            frequency: freq.parse()?,
        };
        if out.insert(id.to_string(), info).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Fills category and frequency from the info map. Ids absent from the map keep
/// their current values.
pub fn attach_info(records: &mut [SeriesRecord], info: &BTreeMap<String, SeriesInfo>) {
    for r in records.iter_mut() {
        if let Some(i) = info.get(&r.id) {
            r.category = Some(i.category);
            r.frequency = Some(i.frequency);
        }
    }
}

/// Drops series shorter than C + 2·O and keeps the last C + 2·O values of the rest.
pub fn equalize_lengths(series: &[SeriesRecord], profile: &FrequencyProfile) -> Vec<SeriesRecord> {
    let keep = profile.equalized_len();
    series
        .iter()
        .filter(|s| s.values.len() >= keep)
        .map(|s| SeriesRecord {
            values: s.values[s.values.len() - keep..].to_vec(),
            ..s.clone()
        })
        .collect()
}

pub fn one_hot_category(category: Category) -> [f64; NUM_CATEGORIES] {
    let mut v = [0.0; NUM_CATEGORIES];
    v[category.index()] = 1.0;
    v
}

/// Summary of series lengths (Table-3 style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

impl LengthStats {
    /// Returns `None` for an empty input. Quantiles interpolate linearly
    /// between order statistics; std-dev uses the sample (n-1) form.
    pub fn from_lengths(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let q = |p: f64| {
            let pos = p * (xs.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        };
        Some(LengthStats {
            count: xs.len(),
            mean,
            std_dev: var.sqrt(),
            min: xs[0],
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            max: xs[xs.len() - 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_row() {
        let r = parse_m4_train_csv("V1,V2\nQ1,5.0,6.0").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].id, "Q1");
        assert_eq!(r[0].values, vec![5.0, 6.0]);
        assert_eq!(r[0].category, None);
    }

    #[test]
    fn trailing_empties_dropped() {
        let r = parse_m4_train_csv("V1\nQ1,5.0,,").unwrap();
        assert_eq!(r[0].values, vec![5.0]);
    }

    #[test]
    fn quoted_m4_layout() {
        let r = parse_m4_train_csv("\"V1\",\"V2\",\"V3\"\n\"Y1\",\"1.5\",\"2\"\n\"Y2\",\"3\",\"\"\n").unwrap();
        assert_eq!(r[0].values, vec![1.5, 2.0]);
        assert_eq!(r[1].id, "Y2");
        assert_eq!(r[1].values, vec![3.0]);
    }

    #[test]
    fn malformed_number_names_row_and_column() {
        match parse_m4_train_csv("V1\nQ1,abc") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, "Q1");
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_m4_train_csv("V1\nQ1,1\nQ1,2").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "Q1"));
    }

    #[test]
    fn info_rows() {
        let m = parse_info_csv("Q1,Finance,Quarterly").unwrap();
        assert_eq!(
            m["Q1"],
            SeriesInfo {
                category: Category::Finance,
                frequency: Frequency::Quarterly
            }
        );
        assert!(parse_info_csv("").unwrap().is_empty());
        match parse_info_csv("Q2,Banking,Quarterly") {
            Err(Error::UnknownCategory(c)) => assert_eq!(c, "Banking"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_info_csv("Q2,Macro,Fortnightly"),
            Err(Error::UnknownFrequency(f)) if f == "Fortnightly"
        ));
    }

    #[test]
    fn info_real_m4_header() {
        let text = "M4id,category,Frequency,Horizon,SP,StartingDate\n\
                    Y1,Macro,1,6,Yearly,01-01-75 12:00\n\
                    W1,Macro,1,13,Weekly,01-01-75 12:00\n\
                    M7,Micro,12,18,Monthly,01-01-75 12:00\n";
        let m = parse_info_csv(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["Y1"].frequency, Frequency::Yearly);
        assert_eq!(m["M7"].category, Category::Micro);
    }

    #[test]
    fn equalize_examples() {
        let p = FrequencyProfile::for_frequency(Frequency::Quarterly);
        assert_eq!((p.min_length, p.horizon), (72, 8));
        let mk = |n: usize| SeriesRecord::new(format!("s{n}"), Category::Other, Frequency::Quarterly, (1..=n).map(|v| v as f64).collect());
        let out = equalize_lengths(&[mk(100), mk(87), mk(88)], &p);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].values.len(), 88);
        assert_eq!(out[0].values[0], 13.0);
        assert_eq!(out[0].values[87], 100.0);
        assert_eq!(out[1].values, mk(88).values);
    }

    #[test]
    fn split_examples() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = DatasetSplit::from_values(&v, 8).unwrap();
        assert_eq!(s.train.len(), 84);
        assert_eq!(s.train[83], 83.0);
        assert_eq!(s.validation, (84..92).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(s.test, (92..100).map(|i| i as f64).collect::<Vec<_>>());

        let s = DatasetSplit::from_values(&v[..17], 8).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 8, 8));

        assert!(matches!(
            DatasetSplit::from_values(&v[..16], 8),
            Err(Error::InsufficientLength { needed: 17, got: 16, .. })
        ));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot_category(Category::Finance), [0., 1., 0., 0., 0., 0.]);
        assert_eq!(one_hot_category(Category::Other), [0., 0., 0., 0., 0., 1.]);
        for c in Category::ALL {
            assert_eq!(one_hot_category(c).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn default_profiles_valid() {
        for f in Frequency::ALL {
            let p = FrequencyProfile::for_frequency(f);
            p.validate().unwrap();
            assert_eq!(p.per_series_param_count(), 2 + p.seasonality);
        }
        let mut p = FrequencyProfile::for_frequency(Frequency::Monthly);
        assert_eq!(p.equalized_len(), 108);
        p.input_window = 6;
        assert!(p.validate().is_err());
    }

    #[test]
    fn non_positive_rejected() {
        let r = SeriesRecord::new("x", Category::Macro, Frequency::Yearly, vec![1.0, 0.0]);
        assert!(matches!(r.validate(), Err(Error::NonPositive { index: 1, .. })));
    }

    #[test]
    fn length_stats_quantiles() {
        let s = LengthStats::from_lengths(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!((s.min, s.q25, s.q50, s.q75, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(LengthStats::from_lengths(&[]).is_none());
    }

    fn arb_records() -> impl Strategy<Value = Vec<SeriesRecord>> {
        prop::collection::vec(prop::collection::vec(1e-3f64..1e6, 1..30), 1..8).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, values)| SeriesRecord {
                    id: format!("S{i}"),
                    category: None,
                    frequency: None,
                    values,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(records in arb_records()) {
            let text = write_m4_train_csv(&records);
            prop_assert_eq!(parse_m4_train_csv(&text).unwrap(), records);
        }

        #[test]
        fn equalize_idempotent(lens in prop::collection::vec(1usize..140, 0..20)) {
            let p = FrequencyProfile::for_frequency(Frequency::Quarterly);
            let recs: Vec<_> = lens.iter().enumerate()
                .map(|(i, &n)| SeriesRecord::new(format!("s{i}"), Category::Micro, Frequency::Quarterly, vec![1.0 + i as f64; n]))
                .collect();
            let once = equalize_lengths(&recs, &p);
            prop_assert!(once.iter().all(|r| r.values.len() == p.equalized_len()));
            prop_assert_eq!(equalize_lengths(&once, &p), once);
        }

        #[test]
        fn split_partitions(n in 3usize..200, o in 1usize..20) {
            prop_assume!(n >= 2 * o + 1);
            let v: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 + 1.0).collect();
            let s = DatasetSplit::from_values(&v, o).unwrap();
            prop_assert_eq!(s.train.len(), n - 2 * o);
            prop_assert_eq!(s.validation.len(), o);
            prop_assert_eq!(s.test.len(), o);
            let mut joined = s.history_for_test();
            joined.extend_from_slice(&s.test);
            prop_assert_eq!(joined, v);
        }
    }
}
