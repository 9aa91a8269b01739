use esrnn_bench::{plans, quarterly_workload};
use esrnn_core::train::{gradient_epoch, losses_equivalent};
use esrnn_core::TrainConfig;

#[test]
fn batched_and_looped_workloads_agree() {
    let (set, model) = quarterly_workload(4, 2);
    let cfg = TrainConfig::default();
    let batched = gradient_epoch(&model, &set, &plans(&set, 256, cfg.seed), &cfg).unwrap();
    let looped = gradient_epoch(&model, &set, &plans(&set, 1, cfg.seed), &cfg).unwrap();
    assert_eq!(batched.windows, looped.windows);
    assert!(losses_equivalent(batched.loss, looped.loss));
}
