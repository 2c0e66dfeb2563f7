//! Classification head over fused vectors, trained per seed with AdamW and
//! best-validation-UAR snapshot selection.

mod adamw;
mod model;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_update, AdamWParams, AdamWState};
pub use model::{loss_and_grad, softmax, Gradients, HeadModel};

use crate::fusion::FusedVector;
use crate::manifest::{Partition, SplitAssignment};
use crate::metrics::{aggregate_with, uar, AggregateResult, MetricsError, StdConvention, SupportMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("vector has dim {got}, model expects {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("partition {0} is empty")]
    EmptyPartition(Partition),
    #[error("no fused feature for {0:?}")]
    MissingFeature(String),
    #[error("no label for {0:?}")]
    MissingLabel(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged: non-finite parameters after epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    pub support_mode: SupportMode,
    pub std_convention: StdConvention,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            batch_size: 32,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            seeds: vec![0, 1, 2],
            support_mode: SupportMode::Strict,
            std_convention: StdConvention::Population,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWParams {
        AdamWParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub seed: u64,
    /// Mean training loss of the initial model.
    pub initial_train_loss: f64,
    /// Mean training loss over the full train partition after each epoch.
    pub per_epoch_train_loss: Vec<f64>,
    pub per_epoch_val_uar: Vec<f64>,
    pub best_epoch: usize,
    pub test_uar: f64,
    /// Test-set predictions of the selected snapshot, ascending id order.
    #[serde(skip)]
    pub test_predictions: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub aggregate: AggregateResult,
}

struct Prepared<'a> {
    train: Vec<(&'a [f64], usize)>,
    val: Vec<(&'a [f64], usize)>,
    test: Vec<(&'a str, &'a [f64], usize)>,
    in_dim: usize,
}

fn prepare<'a>(
    features: &'a BTreeMap<String, FusedVector>,
    labels: &BTreeMap<String, usize>,
    split: &'a SplitAssignment,
) -> Result<Prepared<'a>, TrainError> {
    let mut prepared = Prepared { train: Vec::new(), val: Vec::new(), test: Vec::new(), in_dim: 0 };
    for (id, &part) in &split.mapping {
        let feature = features.get(id).ok_or_else(|| TrainError::MissingFeature(id.clone()))?;
        let label = *labels.get(id).ok_or_else(|| TrainError::MissingLabel(id.clone()))?;
        if prepared.in_dim == 0 {
            prepared.in_dim = feature.dim();
        } else if feature.dim() != prepared.in_dim {
            return Err(TrainError::DimMismatch { got: feature.dim(), expected: prepared.in_dim });
        }
        let z = feature.z.as_slice();
        match part {
            Partition::Train => prepared.train.push((z, label)),
            Partition::Val => prepared.val.push((z, label)),
            Partition::Test => prepared.test.push((id.as_str(), z, label)),
        }
    }
    for (part, empty) in [
        (Partition::Train, prepared.train.is_empty()),
        (Partition::Val, prepared.val.is_empty()),
        (Partition::Test, prepared.test.is_empty()),
    ] {
        if empty {
            return Err(TrainError::EmptyPartition(part));
        }
    }
    Ok(prepared)
}

fn evaluate_uar(model: &HeadModel, rows: &[(&[f64], usize)], n_classes: usize, mode: SupportMode) -> Result<f64, TrainError> {
    let preds = rows.iter().map(|(z, _)| model.predict(z)).collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<usize> = rows.iter().map(|&(_, l)| l).collect();
    Ok(uar(&preds, &truth, n_classes, mode)?)
}

fn mean_loss(model: &HeadModel, rows: &[(&[f64], usize)]) -> Result<f64, TrainError> {
    Ok(loss_and_grad(model, rows)?.0)
}

fn train_seed(data: &Prepared<'_>, n_classes: usize, config: &TrainConfig, seed: u64) -> Result<TrainRecord, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = HeadModel::glorot(data.in_dim, n_classes, &mut rng);
    let mut state = AdamWState::new(&model);
    let hp = config.optimizer();

    let initial_train_loss = mean_loss(&model, &data.train)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut per_epoch_train_loss = Vec::with_capacity(config.epochs);
    let mut per_epoch_val_uar = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, HeadModel)> = None;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.train[i]));
            let (_, grads) = loss_and_grad(&model, &batch)?;
            state.step(&mut model, &grads, &hp);
        }
        if !model.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        per_epoch_train_loss.push(mean_loss(&model, &data.train)?);
        let val = evaluate_uar(&model, &data.val, n_classes, config.support_mode)?;
        per_epoch_val_uar.push(val);
        // Strict comparison keeps the earliest epoch on ties.
        if best.as_ref().is_none_or(|(_, best_val, _)| val > *best_val) {
            best = Some((epoch, val, model.clone()));
        }
    }

    let (best_epoch, _, snapshot) = best.expect("at least one epoch");
    let test_rows: Vec<(&[f64], usize)> = data.test.iter().map(|&(_, z, l)| (z, l)).collect();
    let test_uar = evaluate_uar(&snapshot, &test_rows, n_classes, config.support_mode)?;
    let test_predictions = data
        .test
        .iter()
        .map(|&(id, z, _)| Ok((id.to_owned(), snapshot.predict(z)?)))
        .collect::<Result<Vec<_>, TrainError>>()?;

    Ok(TrainRecord {
        seed,
        initial_train_loss,
        per_epoch_train_loss,
        per_epoch_val_uar,
        best_epoch,
        test_uar,
        test_predictions,
    })
}

/// Trains one head per seed and reports test UAR of each seed's best
/// validation epoch, plus the aggregate over seeds.
pub fn train(
    features: &BTreeMap<String, FusedVector>,
    labels: &BTreeMap<String, usize>,
    n_classes: usize,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let data = prepare(features, labels, split)?;
    if let Some(&label) = labels.values().find(|&&l| l >= n_classes) {
        return Err(TrainError::LabelOutOfRange { label, n_classes });
    }
    let records = config
        .seeds
        .iter()
        .map(|&seed| train_seed(&data, n_classes, config, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let test: Vec<f64> = records.iter().map(|r| r.test_uar).collect();
    let aggregate = aggregate_with(&test, config.std_convention)?;
    Ok(TrainOutcome { records, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (BTreeMap<String, FusedVector>, BTreeMap<String, usize>, SplitAssignment) {
        let mut features = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut mapping = BTreeMap::new();
        for i in 0..60 {
            let id = format!("u{i:02}");
            let class = i % 2;
            let x = if class == 0 { -1.0 } else { 1.0 } + 0.1 * ((i as f64) * 0.37).sin();
            features.insert(
                id.clone(),
                FusedVector { utterance_id: id.clone(), z: vec![x, 0.5], fm_dim: 2, n_scores: 0 },
            );
            labels.insert(id.clone(), class);
            let part = match i % 6 {
                0 | 1 => Partition::Val,
                2 | 3 => Partition::Test,
                _ => Partition::Train,
            };
            mapping.insert(id, part);
        }
        (features, labels, SplitAssignment::new(mapping, None).unwrap())
    }

    #[test]
    fn single_epoch_selects_epoch_zero() {
        let (f, l, s) = toy();
        let cfg = TrainConfig { epochs: 1, seeds: vec![5], ..Default::default() };
        let out = train(&f, &l, 2, &s, &cfg).unwrap();
        assert_eq!(out.records[0].best_epoch, 0);
        assert_eq!(out.records[0].per_epoch_val_uar.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let (f, l, s) = toy();
        let cfg = TrainConfig { lr: 1e-2, epochs: 5, ..Default::default() };
        assert_eq!(train(&f, &l, 2, &s, &cfg).unwrap(), train(&f, &l, 2, &s, &cfg).unwrap());
    }

    #[test]
    fn learns_separable_toy() {
        let (f, l, s) = toy();
        let cfg = TrainConfig { lr: 5e-2, epochs: 30, ..Default::default() };
        let out = train(&f, &l, 2, &s, &cfg).unwrap();
        assert_eq!(out.aggregate.mean, 1.0);
        for r in &out.records {
            assert!(r.per_epoch_train_loss.last().unwrap() < &r.initial_train_loss);
            let best_val = r.per_epoch_val_uar.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(r.per_epoch_val_uar[r.best_epoch], best_val);
            assert!(r.per_epoch_val_uar[..r.best_epoch].iter().all(|&v| v < best_val));
        }
    }

    #[test]
    fn coverage_errors() {
        let (mut f, l, s) = toy();
        f.remove("u07");
        let cfg = TrainConfig::default();
        assert!(matches!(train(&f, &l, 2, &s, &cfg), Err(TrainError::MissingFeature(id)) if id == "u07"));
        let (f, mut l, s) = toy();
        l.remove("u08");
        assert!(matches!(train(&f, &l, 2, &s, &cfg), Err(TrainError::MissingLabel(id)) if id == "u08"));
    }

    #[test]
    fn config_validation() {
        let (f, l, s) = toy();
        for cfg in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { seeds: vec![], ..Default::default() },
        ] {
            assert!(matches!(train(&f, &l, 2, &s, &cfg), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr": 0.01}"#).unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.01}"#).is_err());
    }
}
