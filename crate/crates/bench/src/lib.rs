//! Workloads shared by the criterion benches.

use esrnn_core::synthetic::{seasonal_records, SyntheticOptions};
use esrnn_core::train::{make_batches, WindowRef};
use esrnn_core::{Frequency, FrequencyProfile, Model, TrainingSet};

/// Synthetic quarterly series at the default profile with an initialized model.
pub fn quarterly_workload(n_series: usize, seed: u64) -> (TrainingSet, Model) {
    let profile = FrequencyProfile::for_frequency(Frequency::Quarterly);
    let records = seasonal_records(&SyntheticOptions::quarterly(n_series, profile.equalized_len(), seed));
    let set = TrainingSet::new(profile, &records).expect("synthetic series satisfy the profile");
    let model = Model::init(&set, seed).expect("model init");
    (set, model)
}

/// Every window of `set` grouped into batches of `batch_size`.
pub fn plans(set: &TrainingSet, batch_size: usize, seed: u64) -> Vec<Vec<WindowRef>> {
    make_batches(&set.windows(), batch_size, seed).expect("valid batch size")
}
