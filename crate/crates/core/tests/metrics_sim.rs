use esrnn_core::metrics::{mase, seasonal_naive};
use esrnn_core::synthetic::random_walk_seasonal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// On a random walk times a fixed seasonal pattern, the seasonal-naive
/// forecast of a held-out horizon scores MASE near 1 on average.
#[test]
fn seasonal_naive_mase_is_about_one_on_random_walks() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (season, len, h) = (4, 60, 4);
    let mut total = 0.0;
    let n = 10_000;
    for _ in 0..n {
        let pattern: Vec<f64> = (0..season).map(|_| rng.random_range(0.8..1.2)).collect();
        let y = random_walk_seasonal(len + h, &pattern, 100.0, 0.05, &mut rng);
        let (train, test) = y.split_at(len);
        let f = seasonal_naive(train, season, h).unwrap();
        total += mase(train, test, &f, season).unwrap();
    }
    let mean = total / n as f64;
    assert!((mean - 1.0).abs() < 0.1, "mean MASE {mean}");
}
