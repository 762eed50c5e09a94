//! Staged training: per-stage freezing, the learning-rate schedule and
//! early-stopped checkpoint selection.

mod early_stop;
mod plan;
mod stage;

pub use early_stop::{select_best, EarlyStopPolicy, EarlyStopper};
pub use plan::{Stage, StagePlan};
pub use stage::{run_protocol, run_stage, stratified_split, EpochRecord, StageOutcome, TrainData, TrainerConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, BranchName, MultiStreamModel, ModelConfig, PreparedSample};
    use crate::numcore::{OptimizerConfig, Tensor};
    use crate::vision::{BinaryMask, GrayImage};

    fn config() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stage_channels: vec![4, 4],
                blocks_per_stage: 1,
                final_channels: 6,
                input_size: 16,
            },
            num_classes: 2,
            tau: 0.75,
            infected_size: 8,
        }
    }

    /// Label-1 images carry a bright 4x4 square.
    fn sample(m: &MultiStreamModel, i: usize) -> PreparedSample {
        let label = (i % 2) as u8;
        let (r0, c0) = (1 + (i * 5) % 10, 1 + (i * 3) % 10);
        let mut px = vec![0.2f32; 256];
        let mut mask = BinaryMask::empty(16, 16);
        for (j, p) in px.iter_mut().enumerate() {
            *p += ((j * 7 + i * 13) % 11) as f32 * 0.01;
        }
        if label == 1 {
            for r in r0..r0 + 4 {
                for c in c0..c0 + 4 {
                    px[r * 16 + c] = 0.95;
                    mask.set(r, c, true);
                }
            }
        }
        m.prepare(&GrayImage::new(16, 16, px).unwrap(), &mask, label).unwrap()
    }

    fn data(m: &MultiStreamModel, n_train: usize, n_val: usize) -> TrainData {
        TrainData {
            train: (0..n_train).map(|i| sample(m, i)).collect(),
            val: (n_train..n_train + n_val).map(|i| sample(m, i)).collect(),
        }
    }

    fn snapshot(m: &MultiStreamModel, b: BranchName) -> Vec<Tensor> {
        m.group(b).iter().map(|p| p.value.clone()).collect()
    }

    fn cfg(epochs: usize) -> TrainerConfig {
        TrainerConfig {
            epochs,
            batch_size: 4,
            patience: 100,
            seed: 3,
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn stage_two_keeps_global_bitwise() {
        let mut m = MultiStreamModel::new(config(), 1).unwrap();
        let d = data(&m, 8, 4);
        let before: Vec<_> = BranchName::ALL.iter().map(|&b| snapshot(&m, b)).collect();
        let c = cfg(2);
        run_stage(&mut m, &c.plan(Stage::IIHeatmap), &d, &c.optimizer, EarlyStopPolicy::default(), 0).unwrap();
        assert_eq!(snapshot(&m, BranchName::Global), before[0]);
        assert_ne!(snapshot(&m, BranchName::Heatmap), before[1]);
        assert_eq!(snapshot(&m, BranchName::Infected), before[2]);
        assert_eq!(snapshot(&m, BranchName::Fusion), before[3]);
    }

    #[test]
    fn stage_three_touches_only_fusion() {
        let mut m = MultiStreamModel::new(config(), 2).unwrap();
        let d = data(&m, 8, 4);
        let before: Vec<_> = BranchName::ALL.iter().map(|&b| snapshot(&m, b)).collect();
        let c = cfg(2);
        run_stage(&mut m, &c.plan(Stage::III), &d, &c.optimizer, EarlyStopPolicy::default(), 0).unwrap();
        for (i, b) in [BranchName::Global, BranchName::Heatmap, BranchName::Infected].iter().enumerate() {
            assert_eq!(snapshot(&m, *b), before[i]);
        }
        assert_ne!(snapshot(&m, BranchName::Fusion), before[3]);
    }

    #[test]
    fn small_set_overfits() {
        let mut m = MultiStreamModel::new(config(), 3).unwrap();
        let d = data(&m, 4, 2);
        let c = cfg(20);
        let out = run_stage(&mut m, &c.plan(Stage::I), &d, &c.optimizer, EarlyStopPolicy { patience: 100 }, 0).unwrap();
        assert_eq!(out.history.len(), 20);
        assert!(out.history[19].train_loss < out.history[0].train_loss);
        assert!(out.history.iter().all(|h| h.train_loss.is_finite()));
    }

    #[test]
    fn schedule_in_history() {
        let mut m = MultiStreamModel::new(config(), 3).unwrap();
        let d = data(&m, 2, 2);
        let mut c = cfg(32);
        c.optimizer.learning_rate = 0.01;
        let out = run_stage(&mut m, &c.plan(Stage::III), &d, &c.optimizer, EarlyStopPolicy { patience: 100 }, 0).unwrap();
        assert_eq!(out.history[29].lr, 0.01);
        assert!((out.history[30].lr - 0.001).abs() < 1e-9);
    }

    #[test]
    fn stage_two_order_does_not_matter() {
        let base = MultiStreamModel::new(config(), 4).unwrap();
        let d = data(&base, 8, 4);
        let c = cfg(2);
        let mut a = base.clone();
        run_protocol(&mut a, &d, &c, &[Stage::I, Stage::IIHeatmap, Stage::IIInfected], |_| {}).unwrap();
        let mut b = base.clone();
        run_protocol(&mut b, &d, &c, &[Stage::I, Stage::IIInfected, Stage::IIHeatmap], |_| {}).unwrap();
        let va: Vec<_> = a.params().iter().map(|p| p.value.clone()).collect();
        let vb: Vec<_> = b.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(va, vb);
    }

    #[test]
    fn protocol_is_deterministic_and_heads_are_valid() {
        let base = MultiStreamModel::new(config(), 5).unwrap();
        let d = data(&base, 8, 4);
        let c = cfg(2);
        let mut a = base.clone();
        let ha = run_protocol(&mut a, &d, &c, &Stage::PROTOCOL, |_| {}).unwrap();
        let mut b = base.clone();
        let hb = run_protocol(&mut b, &d, &c, &Stage::PROTOCOL, |_| {}).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        for s in &d.val {
            let p = a.predict_prepared(s).unwrap();
            for h in BranchName::ALL {
                assert!(p.probs(h).iter().all(|&q| q > 0.0 && q < 1.0));
            }
        }
    }

    #[test]
    fn nan_aborts_with_diagnostics() {
        let mut m = MultiStreamModel::new(config(), 6).unwrap();
        let d = data(&m, 4, 2);
        m.global.head[0].value = Tensor::full(vec![2, 6], f32::NAN);
        let c = cfg(1);
        let err = run_stage(&mut m, &c.plan(Stage::I), &d, &c.optimizer, EarlyStopPolicy::default(), 0).unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(ref s) if s.contains("epoch 1")), "{err}");
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i < 20)).collect();
        let (tr, va) = stratified_split(&labels, 0.2, 1);
        assert_eq!(va.len(), 10);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 4);
        assert_eq!(tr.len() + va.len(), 50);
        assert!(tr.iter().all(|i| !va.contains(i)));
        assert_eq!(stratified_split(&labels, 0.2, 1), (tr, va));
    }
}
