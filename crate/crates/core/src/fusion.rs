//! Late fusion: `z = [h ; LN(s)]` with a parameter-free LayerNorm over the
//! zero-shot score vector.

use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("layer norm needs at least 2 components, got {0}")]
    TooShort(usize),
    #[error("FM feature for {id:?} has dim {got}, expected {expected}")]
    FmDim { id: String, got: usize, expected: usize },
    #[error("score vector for {id:?} has length {got}, expected {expected}")]
    ScoreDim { id: String, got: usize, expected: usize },
    #[error("FM feature for {0:?} is empty")]
    EmptyFeature(String),
}

/// `(s - mean) / sqrt(popvar + epsilon)`, no affine parameters.
pub fn layer_norm(s: &[f64], epsilon: f64) -> Result<Vec<f64>, FusionError> {
    if s.len() < 2 {
        return Err(FusionError::TooShort(s.len()));
    }
    let n = s.len() as f64;
    let rough = s.iter().sum::<f64>() / n;
    // Second pass removes the rounding of the first, so constant inputs map
    // to exact zeros.
    let mean = rough + s.iter().map(|x| x - rough).sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = (var + epsilon).sqrt();
    Ok(s.iter().map(|x| (x - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub utterance_id: String,
    pub z: Vec<f64>,
    /// FM feature dim.
    pub fm_dim: usize,
    /// Number of zero-shot components appended (0 for the FM-only baseline).
    pub n_scores: usize,
}

impl FusedVector {
    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Builds fused vectors with fixed expected dimensions.
#[derive(Debug, Clone, Copy)]
pub struct Fuser {
    pub fm_dim: usize,
    pub n_classes: usize,
    pub epsilon: f64,
}

impl Fuser {
    pub fn new(fm_dim: usize, n_classes: usize) -> Self {
        Self { fm_dim, n_classes, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn fuse(&self, id: &str, h: &[f64], s: &[f64]) -> Result<FusedVector, FusionError> {
        if h.len() != self.fm_dim {
            return Err(FusionError::FmDim { id: id.to_owned(), got: h.len(), expected: self.fm_dim });
        }
        if s.len() != self.n_classes {
            return Err(FusionError::ScoreDim { id: id.to_owned(), got: s.len(), expected: self.n_classes });
        }
        let mut z = Vec::with_capacity(h.len() + s.len());
        z.extend_from_slice(h);
        z.extend(layer_norm(s, self.epsilon)?);
        Ok(FusedVector { utterance_id: id.to_owned(), z, fm_dim: self.fm_dim, n_scores: self.n_classes })
    }

    pub fn fuse_none(&self, id: &str, h: &[f64]) -> Result<FusedVector, FusionError> {
        if h.len() != self.fm_dim {
            return Err(FusionError::FmDim { id: id.to_owned(), got: h.len(), expected: self.fm_dim });
        }
        fuse_none(id, h)
    }
}

/// FM-only baseline: `z = h`.
pub fn fuse_none(id: &str, h: &[f64]) -> Result<FusedVector, FusionError> {
    if h.is_empty() {
        return Err(FusionError::EmptyFeature(id.to_owned()));
    }
    Ok(FusedVector { utterance_id: id.to_owned(), z: h.to_vec(), fm_dim: h.len(), n_scores: 0 })
}
