//! Unweighted average recall, confusion matrices, random baselines and
//! seed aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class index {index} out of range for {n_classes} classes")]
    OutOfRange { index: usize, n_classes: usize },
    #[error("class {0} has no true instances")]
    ZeroSupport(usize),
    #[error("no class has any true instance")]
    NoSupport,
    #[error("cannot aggregate an empty list")]
    Empty,
}

/// How classes without true instances are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMode {
    /// Error on any zero-support class.
    #[default]
    Strict,
    /// Drop zero-support classes from the average, with a warning.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1 (0 for a single value).
    Sample,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self, MetricsError> {
        if preds.len() != labels.len() {
            return Err(MetricsError::LengthMismatch { preds: preds.len(), labels: labels.len() });
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&p, &l) in preds.iter().zip(labels) {
            for index in [p, l] {
                if index >= n_classes {
                    return Err(MetricsError::OutOfRange { index, n_classes });
                }
            }
            counts[l][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Recall of each class; `None` where the class has no true instances.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.n_classes())
            .map(|c| {
                let support = self.support(c);
                (support > 0).then(|| self.counts[c][c] as f64 / support as f64)
            })
            .collect()
    }

    pub fn uar(&self, mode: SupportMode) -> Result<f64, MetricsError> {
        let recalls = self.recalls();
        let mut sum = 0.0;
        let mut n = 0usize;
        for (class, recall) in recalls.iter().enumerate() {
            match (recall, mode) {
                (Some(r), _) => {
                    sum += r;
                    n += 1;
                }
                (None, SupportMode::Strict) => return Err(MetricsError::ZeroSupport(class)),
                (None, SupportMode::Lenient) => {
                    log::warn!("class {class} has no true instances; excluded from UAR");
                }
            }
        }
        if n == 0 {
            return Err(MetricsError::NoSupport);
        }
        Ok(sum / n as f64)
    }

    /// TSV with a header row of predicted classes.
    pub fn to_tsv(&self, names: &[String]) -> String {
        let mut out = String::from("true\\pred");
        for name in names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push('\t');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of per-class recalls.
pub fn uar(preds: &[usize], labels: &[usize], n_classes: usize, mode: SupportMode) -> Result<f64, MetricsError> {
    ConfusionMatrix::from_predictions(preds, labels, n_classes)?.uar(mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Result<AggregateResult, MetricsError> {
    aggregate_with(values, StdConvention::Population)
}

pub fn aggregate_with(values: &[f64], convention: StdConvention) -> Result<AggregateResult, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let std = match convention {
        StdConvention::Population => (ss / n).sqrt(),
        StdConvention::Sample if values.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdConvention::Sample => 0.0,
    };
    Ok(AggregateResult { per_seed: values.to_vec(), mean, std })
}

/// Both ways of summarising a folds × seeds result grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    /// Each seed's mean over folds, then aggregated over seeds.
    pub fold_then_seed: AggregateResult,
    /// Every (fold, seed) value pooled.
    pub pooled: AggregateResult,
}

/// `per_fold[f][k]` is the result of seed `k` on fold `f`.
pub fn aggregate_folds(per_fold: &[Vec<f64>], convention: StdConvention) -> Result<FoldAggregate, MetricsError> {
    let n_seeds = per_fold.first().map_or(0, Vec::len);
    if n_seeds == 0 || per_fold.iter().any(|f| f.len() != n_seeds) {
        return Err(MetricsError::Empty);
    }
    let seed_means: Vec<f64> = (0..n_seeds)
        .map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / per_fold.len() as f64)
        .collect();
    let pooled: Vec<f64> = per_fold.iter().flatten().copied().collect();
    Ok(FoldAggregate {
        fold_then_seed: aggregate_with(&seed_means, convention)?,
        pooled: aggregate_with(&pooled, convention)?,
    })
}

/// UAR of a uniform-random predictor, one value per trial.
pub fn random_baseline(labels: &[usize], n_classes: usize, n_trials: usize, seed: u64) -> Result<AggregateResult, MetricsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_trials);
    let mut preds = vec![0usize; labels.len()];
    for _ in 0..n_trials {
        for p in &mut preds {
            *p = rng.random_range(0..n_classes);
        }
        values.push(uar(&preds, labels, n_classes, SupportMode::Strict)?);
    }
    aggregate(&values)
}
