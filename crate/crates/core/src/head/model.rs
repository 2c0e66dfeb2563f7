use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Linear softmax classifier over fused vectors.
///
/// `weights` is row-major `in_dim × n_classes`, so the logit of class `c` is
/// `Σ_i weights[i * n_classes + c] * z[i] + bias[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub in_dim: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadModel {
    pub fn zeros(in_dim: usize, n_classes: usize) -> Self {
        Self { in_dim, n_classes, weights: vec![0.0; in_dim * n_classes], bias: vec![0.0; n_classes] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, n_classes: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + n_classes) as f64).sqrt();
        let weights = (0..in_dim * n_classes).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { in_dim, n_classes, weights, bias: vec![0.0; n_classes] }
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>, TrainError> {
        if z.len() != self.in_dim {
            return Err(TrainError::DimMismatch { got: z.len(), expected: self.in_dim });
        }
        let mut out = self.bias.clone();
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.weights[i * self.n_classes..(i + 1) * self.n_classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * zi;
            }
        }
        Ok(out)
    }

    /// Class probabilities `softmax(Wᵀz + b)`.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>, TrainError> {
        Ok(softmax(&self.logits(z)?))
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize, TrainError> {
        Ok(crate::zeroshot::argmax(&self.logits(z)?))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over the batch and its analytic gradient. Weight
/// decay is not part of the loss; the optimizer applies it.
pub fn loss_and_grad(model: &HeadModel, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let c = model.n_classes;
    let mut grads = Gradients { weights: vec![0.0; model.weights.len()], bias: vec![0.0; c] };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for &(z, label) in batch {
        if label >= c {
            return Err(TrainError::LabelOutOfRange { label, n_classes: c });
        }
        let logits = model.logits(z)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_total = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        loss += log_total - logits[label];

        // d loss / d logit = p - onehot(label)
        let mut delta: Vec<f64> = logits.iter().map(|l| (l - log_total).exp()).collect();
        delta[label] -= 1.0;
        for (gb, d) in grads.bias.iter_mut().zip(&delta) {
            *gb += scale * d;
        }
        for (i, &zi) in z.iter().enumerate() {
            let row = &mut grads.weights[i * c..(i + 1) * c];
            for (g, d) in row.iter_mut().zip(&delta) {
                *g += scale * zi * d;
            }
        }
    }
    Ok((loss * scale, grads))
}
