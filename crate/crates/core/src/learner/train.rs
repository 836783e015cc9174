use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::autodiff::{OperatorGrads, Projection};
use super::LearnableModel;
use crate::engine::check_threshold;
use crate::error::{PfaError, Result};
use crate::generator::{LabeledDataset, LabeledItem};
use crate::stochastic::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelMode {
    /// Supervise on `hard_label`.
    Binary,
    /// Supervise on `soft_label`.
    Soft,
}

impl std::str::FromStr for LabelMode {
    type Err = PfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BINARY" | "HARD" => Ok(LabelMode::Binary),
            "SOFT" => Ok(LabelMode::Soft),
            other => Err(PfaError::InvalidArgument(format!("unknown label mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub label_mode: LabelMode,
    /// Test loss is recorded before every `test_every`-th update.
    pub test_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            label_mode: LabelMode::Binary,
            test_every: 10,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.test_every == 0 {
            return Err(PfaError::InvalidArgument(
                "batch_size and test_every must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PfaError::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    fn push(&mut self, epoch: usize, batch: usize, split: Split, loss: f64) -> Result<()> {
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(PfaError::NonFinite(format!(
                "{} loss {loss} at epoch {epoch} batch {batch}",
                split.name()
            )));
        }
        self.records.push(LossRecord {
            epoch,
            batch,
            split,
            loss,
        });
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LossRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Mean loss of one split over one epoch.
    pub fn epoch_mean(&self, epoch: usize, split: Split) -> Option<f64> {
        let (sum, count) = self
            .split(split)
            .filter(|r| r.epoch == epoch)
            .fold((0.0, 0usize), |(s, c), r| (s + r.loss, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    pub fn first(&self, split: Split) -> Option<f64> {
        self.split(split).next().map(|r| r.loss)
    }

    pub fn last(&self, split: Split) -> Option<f64> {
        self.split(split).last().map(|r| r.loss)
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.records.iter().map(|r| r.epoch).max()
    }

    /// `epoch,batch,split,loss` with ten significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,batch,split,loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{:.9e}", r.epoch, r.batch, r.split.name(), r.loss);
        }
        out
    }
}

pub fn loss_bce(pred: f64, label: f64) -> f64 {
    -(label * pred.ln() + (1.0 - label) * (1.0 - pred).ln())
}

/// `∂ loss_bce / ∂ pred`.
pub fn loss_bce_grad(pred: f64, label: f64) -> f64 {
    (pred - label) / (pred * (1.0 - pred))
}

fn target(item: &LabeledItem, mode: LabelMode) -> f64 {
    match mode {
        LabelMode::Binary => f64::from(item.hard_label),
        LabelMode::Soft => item.soft_label,
    }
}

fn mean_loss(
    model: &LearnableModel,
    projection: &Arc<Projection>,
    items: &[LabeledItem],
    mode: LabelMode,
) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let tape = projection.forward_encoded(&model.encode(&item.string)?)?;
        total += loss_bce(tape.prob(), target(item, mode));
    }
    Ok(total / items.len().max(1) as f64)
}

/// Mini-batch Adam on mean BCE. Returns the trained model and its loss log.
pub fn train(
    model: &LearnableModel,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(LearnableModel, LossLog)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(PfaError::InvalidArgument("empty training set".into()));
    }
    let mut model = model.clone();
    let encoded = train_set
        .items
        .iter()
        .map(|item| model.encode(&item.string))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = seeded_rng(cfg.seed);
    let mut state = AdamState::new(model.parameter_count());
    let mut log = LossLog::default();
    let mut global = 0usize;
    let num_batches = train_set.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let projection = Arc::new(Projection::new(&model)?);
            if global.is_multiple_of(cfg.test_every) && !test_set.is_empty() {
                let loss = mean_loss(&model, &projection, &test_set.items, cfg.label_mode)?;
                log.push(epoch, b, Split::Test, loss)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = OperatorGrads::zeros(model.layout());
            let mut batch_loss = 0.0;
            for &idx in batch {
                let tape = projection.forward_encoded(&encoded[idx])?;
                let y = target(&train_set.items[idx], cfg.label_mode);
                let p = tape.prob();
                batch_loss += loss_bce(p, y);
                projection.accumulate(&tape, loss_bce_grad(p, y) * scale, &mut grads);
            }
            log.push(epoch, b, Split::Train, batch_loss * scale)?;
            let g = projection.finish(&grads)?;
            adam_step(model.params_mut(), &g.values, &mut state, cfg.adam())?;
            global += 1;
        }
    }
    if cfg.epochs > 0 && !test_set.is_empty() {
        let projection = Arc::new(Projection::new(&model)?);
        let loss = mean_loss(&model, &projection, &test_set.items, cfg.label_mode)?;
        log.push(cfg.epochs - 1, num_batches, Split::Test, loss)?;
    }
    Ok((model, log))
}

/// Fraction of items whose thresholded model output equals the hard label.
pub fn evaluate_accuracy(model: &LearnableModel, dataset: &LabeledDataset, tau: f64) -> Result<f64> {
    check_threshold(tau)?;
    if dataset.is_empty() {
        return Err(PfaError::InvalidArgument("empty evaluation set".into()));
    }
    let projection = Arc::new(Projection::new(model)?);
    let mut correct = 0usize;
    for item in &dataset.items {
        let tape = projection.forward_encoded(&model.encode(&item.string)?)?;
        if u8::from(tape.prob() > tau) == item.hard_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{balanced_instance, GenConfig, DEFAULT_MAX_RETRIES, DEFAULT_MIN_MINORITY};
    use crate::learner::{HeadMode, ModelOptions};

    #[test]
    fn bce_reference_values() {
        assert!((loss_bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss_bce(0.9, 1.0) - 0.105_360_515_657_826_3).abs() < 1e-12);
        for y in [1e-6, 0.2, 0.5, 0.8] {
            let at = loss_bce(y, y);
            assert!(loss_bce(y * 0.99, y) > at && loss_bce(y + (1.0 - y) * 0.01, y) > at);
            assert!(loss_bce_grad(y, y).abs() < 1e-9);
        }
    }

    fn instance(seed: u64) -> (LearnableModel, LabeledDataset, LabeledDataset) {
        let mut cfg = GenConfig::config1(seed);
        cfg.num_strings = 120;
        let mut rng = seeded_rng(seed);
        let inst =
            balanced_instance(&cfg, &mut rng, DEFAULT_MIN_MINORITY, DEFAULT_MAX_RETRIES).unwrap();
        let mut items = inst.dataset.items.clone();
        let test = items.split_off(100);
        let train_set = LabeledDataset {
            items,
            ..inst.dataset.clone()
        };
        let test_set = LabeledDataset {
            items: test,
            ..inst.dataset.clone()
        };
        let model = LearnableModel::random(
            cfg.alphabet(),
            inst.pfa.accepting().clone(),
            ModelOptions {
                head: HeadMode::RawClipped,
                ..ModelOptions::default()
            },
            &mut rng,
        )
        .unwrap();
        (model, train_set, test_set)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (model, train_set, test_set) = instance(1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let (trained, log) = train(&model, &train_set, &test_set, &cfg).unwrap();
        assert_eq!(trained.params(), model.params());
        assert_eq!(log.split(Split::Train).count(), 8);
        assert_eq!(log.split(Split::Test).count(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let (model, train_set, test_set) = instance(2);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, la) = train(&model, &train_set, &test_set, &cfg).unwrap();
        let (b, lb) = train(&model, &train_set, &test_set, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.to_csv(), lb.to_csv());
    }

    #[test]
    fn log_csv_has_ten_significant_digits() {
        let mut log = LossLog::default();
        log.push(0, 3, Split::Train, std::f64::consts::LN_2).unwrap();
        assert_eq!(log.to_csv(), "epoch,batch,split,loss\n0,3,train,6.931471806e-1\n");
        assert!(log.push(0, 0, Split::Test, f64::NAN).is_err());
    }

    #[test]
    fn ground_truth_model_is_perfectly_accurate() {
        let (_, train_set, _) = instance(3);
        let pfa = crate::generator::random_pfa(
            train_set.config.as_ref().unwrap(),
            &mut seeded_rng(3),
        )
        .unwrap();
        let labeled = crate::generator::label_dataset(
            &pfa,
            &train_set.items.iter().map(|i| i.string.clone()).collect::<Vec<_>>(),
            0.5,
        )
        .unwrap();
        let model = LearnableModel::from_pfa(&pfa, HeadMode::RawClipped).unwrap();
        assert_eq!(evaluate_accuracy(&model, &labeled, 0.5).unwrap(), 1.0);
    }
}
