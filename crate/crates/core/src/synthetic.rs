//! Seeded synthetic series for tests, benchmarks and smoke runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::data::{Category, Frequency, SeriesRecord};

/// `y_t = level · (1 + trend)^t · season[t mod S] · ε_t` with `ln ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalSpec {
    pub level: f64,
    pub trend: f64,
    /// One multiplicative coefficient per phase.
    pub season: Vec<f64>,
    pub noise_sigma: f64,
}

impl SeasonalSpec {
    pub fn generate<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let noise = LogNormal::new(0.0, self.noise_sigma).expect("sigma is finite and >= 0");
        (0..len)
            .map(|t| {
                let e = if self.noise_sigma > 0.0 { noise.sample(rng) } else { 1.0 };
                self.level * (1.0 + self.trend).powi(t as i32) * self.season[t % self.season.len()] * e
            })
            .collect()
    }

    /// Random level in [50, 5000), trend in `trend`, seasonal amplitude up to
    /// `amplitude`, coefficients normalized to mean 1.
    pub fn random<R: Rng + ?Sized>(season: usize, trend: (f64, f64), amplitude: f64, noise_sigma: f64, rng: &mut R) -> Self {
        let level = 50.0 * 100f64.powf(rng.random::<f64>());
        let trend = rng.random_range(trend.0..=trend.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = if season > 1 { rng.random_range(0.3 * amplitude..=amplitude) } else { 0.0 };
        let raw: Vec<f64> = (0..season)
            .map(|k| 1.0 + amp * (std::f64::consts::TAU * k as f64 / season as f64 + phase).sin())
            .collect();
        let mean = raw.iter().sum::<f64>() / season as f64;
        SeasonalSpec {
            level,
            trend,
            season: raw.iter().map(|s| s / mean).collect(),
            noise_sigma,
        }
    }
}

/// Options for [`seasonal_records`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub count: usize,
    pub len: usize,
    pub season: usize,
    pub trend: (f64, f64),
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub frequency: Frequency,
    pub seed: u64,
}

impl SyntheticOptions {
    pub fn quarterly(count: usize, len: usize, seed: u64) -> Self {
        SyntheticOptions {
            count,
            len,
            season: 4,
            trend: (-0.005, 0.02),
            amplitude: 0.3,
            noise_sigma: 0.05,
            frequency: Frequency::Quarterly,
            seed,
        }
    }
}

/// Multiplicative seasonal series with ids `S1..`, categories assigned in rotation.
pub fn seasonal_records(opts: &SyntheticOptions) -> Vec<SeriesRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.count)
        .map(|i| {
            let spec = SeasonalSpec::random(opts.season, opts.trend, opts.amplitude, opts.noise_sigma, &mut rng);
            let values = spec.generate(opts.len, &mut rng);
            SeriesRecord::new(format!("S{}", i + 1), Category::ALL[i % Category::ALL.len()], opts.frequency, values)
        })
        .collect()
}

/// Log-scale random walk with step sd `sigma` times a fixed seasonal
/// pattern; stays positive.
pub fn random_walk_seasonal<R: Rng + ?Sized>(len: usize, season: &[f64], start: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    let step = Normal::new(0.0, sigma).expect("sigma is finite and >= 0");
    let mut log_level = start.ln();
    (0..len)
        .map(|t| {
            log_level += step.sample(rng);
            log_level.exp() * season[t % season.len()]
        })
        .collect()
}
