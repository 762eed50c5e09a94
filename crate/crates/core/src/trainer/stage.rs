use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::early_stop::{EarlyStopPolicy, EarlyStopper};
use super::plan::{Stage, StagePlan};
use crate::model::{predicted_label, BranchSet, FrozenFeatures, MultiStreamModel, PreparedSample};
use crate::numcore::{batch_gradients, scale_grads, sgd_step, sigmoid, OptimizerConfig, Parameter, Tape, Tensor};
use crate::{Error, Result};

/// Protocol-level training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Fraction of the training split held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 50,
            batch_size: 32,
            patience: 10,
            val_fraction: 0.2,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("trainer batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("trainer patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0,1)", self.val_fraction)));
        }
        self.optimizer.validate()
    }

    pub fn plan(&self, stage: Stage) -> StagePlan {
        StagePlan::new(stage, self.epochs, self.batch_size)
    }
}

/// Prepared training and validation samples.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Stratified split of `labels` into `(train, val)` index lists: each class
/// contributes `round(fraction * n_class)` randomly chosen items to `val`.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = (fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn features(model: &MultiStreamModel, samples: &[PreparedSample], frozen: BranchSet) -> Result<Vec<FrozenFeatures>> {
    samples.par_iter().map(|s| model.frozen_features(s, frozen)).collect()
}

/// Loss and accuracy of one head, with nothing trainable.
fn evaluate(
    model: &MultiStreamModel,
    plan: &StagePlan,
    samples: &[PreparedSample],
    cache: &[FrozenFeatures],
) -> Result<(f64, f64)> {
    let heads = BranchSet::of(&[plan.monitor]);
    let per: Vec<(f64, bool)> = samples
        .par_iter()
        .zip(cache)
        .map(|(s, c)| {
            let mut tape = Tape::<f32>::new();
            let (loss, rec) = model.record_loss(&mut tape, s, c, BranchSet::NONE, heads)?;
            let z = tape.value(rec.logits[plan.monitor.index()].expect("monitored head"));
            let probs: Vec<f32> = z.data().iter().map(|&v| sigmoid(v)).collect();
            Ok((tape.value(loss).item() as f64, predicted_label(&probs) == s.label))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Trains the groups in `plan.trainable` with SGD on the summed
/// cross-entropy of `plan.heads`; every other parameter is frozen and left
/// bitwise unchanged. The parameters of the best validation epoch are kept.
pub fn run_stage(
    model: &mut MultiStreamModel,
    plan: &StagePlan,
    data: &TrainData,
    opt: &OptimizerConfig,
    policy: EarlyStopPolicy,
    seed: u64,
) -> Result<StageOutcome> {
    plan.validate()?;
    opt.validate()?;
    if data.train.is_empty() {
        return Err(Error::Validation(format!("stage {}: empty training set", plan.stage)));
    }
    if data.val.is_empty() {
        return Err(Error::Validation(format!("stage {}: empty validation set", plan.stage)));
    }
    use crate::model::BranchName::*;
    let needed: Vec<_> = plan
        .frozen()
        .names()
        .into_iter()
        .filter(|&b| match b {
            Heatmap => plan.heads.contains(Heatmap) || plan.heads.contains(Fusion),
            Infected => plan.heads.contains(Infected) || plan.heads.contains(Fusion),
            _ => true,
        })
        .collect();
    let frozen = BranchSet::of(&needed);
    model.set_frozen(BranchSet::ALL, true);
    model.set_frozen(plan.trainable, false);
    for p in model.params_mut() {
        p.reset_momentum();
    }

    let train_cache = features(model, &data.train, frozen)?;
    let val_cache = features(model, &data.val, frozen)?;
    let n_params = model.params().len();
    let trainable_idx: Vec<usize> = plan
        .trainable
        .names()
        .into_iter()
        .flat_map(|b| model.group_range(b))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ plan.stage.rng_stream().wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stopper = EarlyStopper::new(policy);
    let mut best_values: Vec<Tensor> = trainable_idx.iter().map(|&i| model.params()[i].value.clone()).collect();
    let mut history = Vec::with_capacity(plan.epochs);
    let mut stopped_early = false;

    for epoch in 1..=plan.epochs {
        let lr = opt.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(plan.batch_size).enumerate() {
            let m = &*model;
            let (loss, mut grads) = batch_gradients(batch, n_params, |&i| {
                let mut tape = Tape::<f32>::new();
                let (loss, rec) = m.record_loss(&mut tape, &data.train[i], &train_cache[i], plan.trainable, plan.heads)?;
                let lv = tape.value(loss).item() as f64;
                let mut g = tape.backward(loss)?;
                let grads = rec.leaves.iter().filter_map(|&(pi, v)| g.take(v).map(|d| (pi, d))).collect();
                Ok((lv, grads))
            })?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "stage {}: loss is {loss} at epoch {epoch}, batch {}",
                    plan.stage,
                    b + 1
                )));
            }
            epoch_loss += loss;
            scale_grads(&mut grads, 1.0 / batch.len() as f32);
            let g: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            let mut params: Vec<&mut Parameter> = model.params_mut();
            sgd_step(&mut params, &g, opt, lr).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("stage {}: {msg} at epoch {epoch}, batch {}", plan.stage, b + 1))
                }
                other => other,
            })?;
        }
        let (val_loss, val_accuracy) = evaluate(model, plan, &data.val, &val_cache)?;
        history.push(EpochRecord {
            stage: plan.stage,
            epoch,
            lr,
            train_loss: epoch_loss / data.train.len() as f64,
            val_loss,
            val_accuracy,
        });
        if stopper.observe(epoch, val_accuracy) {
            let params = model.params();
            best_values = trainable_idx.iter().map(|&i| params[i].value.clone()).collect();
        }
        if stopper.should_stop(epoch) && epoch < plan.epochs {
            stopped_early = true;
            break;
        }
    }

    let mut params = model.params_mut();
    for (&i, v) in trainable_idx.iter().zip(best_values) {
        params[i].value = v;
    }
    let (best_epoch, best_val_accuracy) = stopper.best().unwrap_or((0, f64::NAN));
    Ok(StageOutcome {
        stage: plan.stage,
        history,
        best_epoch,
        best_val_accuracy,
        stopped_early,
    })
}

/// Runs the given stages in order, each starting from the previous stage's
/// selected parameters.
pub fn run_protocol(
    model: &mut MultiStreamModel,
    data: &TrainData,
    cfg: &TrainerConfig,
    stages: &[Stage],
    mut on_stage: impl FnMut(&StageOutcome),
) -> Result<Vec<StageOutcome>> {
    cfg.validate()?;
    let policy = EarlyStopPolicy { patience: cfg.patience };
    let mut out = Vec::with_capacity(stages.len());
    for &stage in stages {
        let outcome = run_stage(model, &cfg.plan(stage), data, &cfg.optimizer, policy, cfg.seed)?;
        on_stage(&outcome);
        out.push(outcome);
    }
    model.set_frozen(BranchSet::ALL, false);
    Ok(out)
}
