//! Multiplicative Holt-Winters state computation.
//!
//! Two recursions live here. The classical one tracks level, trend and
//! seasonality and forecasts `l_T · b_T^h · s_(T-S+h⁺)`. The hybrid primer
//! drops the trend (the network models it) and keeps
//!
//! ```text
//! l_t     = α · y_t / s_t + (1 - α) · l_(t-1)
//! s_(t+S) = γ · y_t / l_(t-1) + (1 - γ) · s_t
//! ```
//!
//! with `l_0` the mean of the first `S` observations and `s_1..s_S` learned.
//! Seasonal arrays are indexed so that `y_t` (1-based) pairs with slot `t-1`;
//! positions past the stored `T + S` slots wrap with period `S`.

mod classical;
mod primer;
mod window;

pub use classical::{classical_hw_forecast, ClassicalHWParams};
pub use primer::{hybrid_primer, primer_on_tape, HWState, PerSeriesParams, TapeHwState, TapePerSeriesParams};
pub use window::{deseasonalize_normalize, reseasonalize_denormalize, window_count, window_series, Window};

/// Logistic squashing of an unconstrained value into (0, 1).
pub fn squash(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

/// Slot in a seasonal array of `stored` entries for position `pos`, wrapping
/// over the last `season` entries once `pos` runs past the end.
pub fn seasonal_slot(pos: usize, stored: usize, season: usize) -> usize {
    if pos < stored {
        pos
    } else {
        let base = stored - season;
        base + (pos - base) % season
    }
}
