//! Synthetic stand-in for the external encoders.
//!
//! FM features are Gaussian clusters around per-class means; ALM text
//! embeddings are per-class directions with small per-prompt jitter; ALM
//! audio embeddings mix the true class direction with isotropic noise, the
//! mixing weight being `zero_shot_informativeness`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{audio_key, write_embeddings, EmbedError, EmbeddingTable};
use crate::manifest::{DatasetManifest, LabelSet, ManifestError, UtteranceRecord};
use crate::prompt::{prompt_id, PromptTemplateKind};

/// Class codes in the order they are picked for an `n_classes` world, so
/// that 4 classes give the A/H/N/S set.
const CLASS_PREFERENCE: [char; 8] = ['A', 'H', 'N', 'S', 'C', 'D', 'F', 'U'];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub n_classes: usize,
    pub dim_fm: usize,
    pub dim_alm: usize,
    pub cluster_separation: f64,
    pub zero_shot_informativeness: f64,
    pub n_per_class: usize,
    pub seed: u64,
    #[serde(default = "defaults::n_speakers")]
    pub n_speakers: usize,
    #[serde(default = "defaults::n_sessions")]
    pub n_sessions: usize,
    #[serde(default = "defaults::max_repeat")]
    pub max_audio_repeat: u32,
    #[serde(default = "defaults::max_repeat")]
    pub max_text_repeat: u32,
    /// Scale of the perturbation separating repeat factors ≥ 2 from factor 1.
    #[serde(default = "defaults::jitter")]
    pub repeat_jitter: f64,
    /// Scale of the per-template perturbation of class text directions.
    #[serde(default = "defaults::jitter")]
    pub prompt_jitter: f64,
}

mod defaults {
    pub fn n_speakers() -> usize {
        10
    }
    pub fn n_sessions() -> usize {
        5
    }
    pub fn max_repeat() -> u32 {
        4
    }
    pub fn jitter() -> f64 {
        0.05
    }
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            dim_fm: 32,
            dim_alm: 64,
            cluster_separation: 2.0,
            zero_shot_informativeness: 0.5,
            n_per_class: 100,
            seed: 0,
            n_speakers: defaults::n_speakers(),
            n_sessions: defaults::n_sessions(),
            max_audio_repeat: defaults::max_repeat(),
            max_text_repeat: defaults::max_repeat(),
            repeat_jitter: defaults::jitter(),
            prompt_jitter: defaults::jitter(),
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::Config(msg.to_owned()));
        if !(2..=CLASS_PREFERENCE.len()).contains(&self.n_classes) {
            return bad("n_classes must be between 2 and 8");
        }
        if self.dim_fm == 0 || self.dim_alm == 0 {
            return bad("embedding dims must be positive");
        }
        if !(self.cluster_separation.is_finite() && self.cluster_separation >= 0.0) {
            return bad("cluster_separation must be a non-negative real");
        }
        if !(0.0..=1.0).contains(&self.zero_shot_informativeness) {
            return bad("zero_shot_informativeness must lie in [0, 1]");
        }
        if self.n_per_class == 0 || self.n_speakers == 0 || self.n_sessions == 0 {
            return bad("n_per_class, n_speakers and n_sessions must be positive");
        }
        if self.max_audio_repeat == 0 || self.max_text_repeat == 0 {
            return bad("repeat ranges must include 1");
        }
        if !(self.repeat_jitter >= 0.0 && self.prompt_jitter >= 0.0) {
            return bad("jitter scales must be non-negative");
        }
        Ok(())
    }

    pub fn class_codes(&self) -> Vec<char> {
        CLASS_PREFERENCE[..self.n_classes].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub manifest: DatasetManifest,
    pub fm: EmbeddingTable,
    /// Keyed by audio repeat factor; entries keyed `"{id}@a{a}"`.
    pub alm_audio: BTreeMap<u32, EmbeddingTable>,
    /// Keyed by prompt id for every template, class and text repeat factor.
    pub alm_text: EmbeddingTable,
}

// Independent generator streams per component keep each table stable when
// another component's size changes.
const STREAM_FM_MEANS: u64 = 1;
const STREAM_FM_SAMPLES: u64 = 2;
const STREAM_TEXT: u64 = 3;
const STREAM_AUDIO: u64 = 4;
const STREAM_META: u64 = 5;
const STREAM_REPEAT_BASE: u64 = 100;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn add_scaled(base: &[f64], noise: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(noise).map(|(b, n)| b + scale * n).collect()
}

pub fn synth_world(config: &SyntheticWorldConfig) -> Result<SyntheticWorld, SynthError> {
    config.validate()?;
    let label_set = LabelSet::from_codes(&config.class_codes())?;
    let n_classes = label_set.len();
    let codes = label_set.codes();

    // Records interleave classes so every speaker sees every class.
    let mut meta_rng = stream(config.seed, STREAM_META);
    let mut records = Vec::with_capacity(n_classes * config.n_per_class);
    let mut labels = Vec::with_capacity(records.capacity());
    for round in 0..config.n_per_class {
        for (class, &code) in codes.iter().enumerate() {
            let index = records.len();
            let speaker = round % config.n_speakers;
            records.push(UtteranceRecord {
                id: format!("utt{index:06}"),
                speaker_id: format!("spk{speaker:03}"),
                session_id: Some(format!("Ses{:02}", speaker % config.n_sessions + 1)),
                label_code: code,
                duration_s: 2.0 + 3.5 * meta_rng.random::<f64>(),
                audio_path: None,
            });
            labels.push(class);
        }
    }
    let manifest = DatasetManifest::new(format!("synthetic-seed{}", config.seed), label_set, records)?;

    // FM space: class means at distance `cluster_separation` from the origin.
    let mut mean_rng = stream(config.seed, STREAM_FM_MEANS);
    let fm_means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            unit(gaussian(&mut mean_rng, config.dim_fm, 1.0))
                .into_iter()
                .map(|x| x * config.cluster_separation)
                .collect()
        })
        .collect();
    let mut fm_rng = stream(config.seed, STREAM_FM_SAMPLES);
    let mut fm = EmbeddingTable::new("synthetic-fm", config.dim_fm)?;
    for (rec, &class) in manifest.records.iter().zip(&labels) {
        let noise = gaussian(&mut fm_rng, config.dim_fm, 1.0);
        fm.insert_f64(rec.id.clone(), &add_scaled(&fm_means[class], &noise, 1.0))?;
    }

    // ALM text side: one direction per class, jittered per template and
    // again per text repeat factor.
    let mut text_rng = stream(config.seed, STREAM_TEXT);
    let noise_scale = 1.0 / (config.dim_alm as f64).sqrt();
    let class_dirs: Vec<Vec<f64>> =
        (0..n_classes).map(|_| unit(gaussian(&mut text_rng, config.dim_alm, 1.0))).collect();
    let mut alm_text = EmbeddingTable::new("synthetic-alm-text", config.dim_alm)?;
    for kind in PromptTemplateKind::ALL {
        for (class, &code) in codes.iter().enumerate() {
            let kind_noise = gaussian(&mut text_rng, config.dim_alm, noise_scale);
            let base = add_scaled(&class_dirs[class], &kind_noise, config.prompt_jitter);
            for t in 1..=config.max_text_repeat {
                let v = if t == 1 {
                    unit(base.clone())
                } else {
                    let rep_noise = gaussian(&mut text_rng, config.dim_alm, noise_scale);
                    unit(add_scaled(&base, &rep_noise, config.repeat_jitter))
                };
                alm_text.insert_f64(prompt_id(kind, code, t), &v)?;
            }
        }
    }

    // ALM audio side.
    let w = config.zero_shot_informativeness;
    let mut audio_rng = stream(config.seed, STREAM_AUDIO);
    let base_audio: Vec<Vec<f64>> = labels
        .iter()
        .map(|&class| {
            let noise = gaussian(&mut audio_rng, config.dim_alm, noise_scale);
            class_dirs[class].iter().zip(&noise).map(|(d, n)| w * d + (1.0 - w) * n).collect()
        })
        .collect();
    let mut alm_audio = BTreeMap::new();
    for a in 1..=config.max_audio_repeat {
        let mut table = EmbeddingTable::new(format!("synthetic-alm-audio-a{a}"), config.dim_alm)?;
        let mut rep_rng = stream(config.seed, STREAM_REPEAT_BASE + u64::from(a));
        for (rec, base) in manifest.records.iter().zip(&base_audio) {
            let v = if a == 1 {
                base.clone()
            } else {
                let jitter = gaussian(&mut rep_rng, config.dim_alm, noise_scale);
                add_scaled(base, &jitter, config.repeat_jitter)
            };
            table.insert_f64(audio_key(&rec.id, a), &v)?;
        }
        alm_audio.insert(a, table);
    }

    Ok(SyntheticWorld { manifest, fm, alm_audio, alm_text })
}

impl SyntheticWorld {
    /// Writes `manifest.json`, `fm.zsem`, `alm_audio_a{a}.zsem` and
    /// `alm_text.zsem` into `dir`, returning the paths written.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, SynthError> {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.display().to_string(), source })?;
        let mut written = Vec::new();
        let manifest_path = dir.join("manifest.json");
        self.manifest.save(&manifest_path)?;
        written.push(manifest_path);
        let fm_path = dir.join("fm.zsem");
        write_embeddings(&self.fm, &fm_path)?;
        written.push(fm_path);
        for (a, table) in &self.alm_audio {
            let path = dir.join(format!("alm_audio_a{a}.zsem"));
            write_embeddings(table, &path)?;
            written.push(path);
        }
        let text_path = dir.join("alm_text.zsem");
        write_embeddings(&self.alm_text, &text_path)?;
        written.push(text_path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::encode_embeddings;

    fn small(seed: u64, w: f64) -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            n_per_class: 20,
            zero_shot_informativeness: w,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_world(&small(3, 0.5)).unwrap();
        let b = synth_world(&small(3, 0.5)).unwrap();
        assert_eq!(encode_embeddings(&a.fm).unwrap(), encode_embeddings(&b.fm).unwrap());
        assert_eq!(encode_embeddings(&a.alm_text).unwrap(), encode_embeddings(&b.alm_text).unwrap());
        for (x, y) in a.alm_audio.values().zip(b.alm_audio.values()) {
            assert_eq!(encode_embeddings(x).unwrap(), encode_embeddings(y).unwrap());
        }
        assert_eq!(a.manifest, b.manifest);
        let c = synth_world(&small(4, 0.5)).unwrap();
        assert_ne!(a.fm, c.fm);
    }

    #[test]
    fn shapes_and_keys() {
        let w = synth_world(&small(1, 0.5)).unwrap();
        assert_eq!(w.manifest.len(), 80);
        assert_eq!(w.manifest.label_set.codes(), vec!['A', 'H', 'N', 'S']);
        assert_eq!(w.fm.len(), 80);
        assert_eq!(w.alm_audio.len(), 4);
        assert!(w.alm_audio[&3].contains("utt000000@a3"));
        // 3 templates × 4 classes × 4 text repeats
        assert_eq!(w.alm_text.len(), 48);
        assert!(w.alm_text.contains("voice_attribute:S:t4"));
        let sessions: std::collections::BTreeSet<_> =
            w.manifest.records.iter().map(|r| r.session_id.clone().unwrap()).collect();
        assert_eq!(sessions.len(), 5);
    }

    #[test]
    fn repeats_are_small_perturbations() {
        let w = synth_world(&small(2, 0.7)).unwrap();
        let one = w.alm_audio[&1].get_f64("utt000005@a1").unwrap();
        let two = w.alm_audio[&2].get_f64("utt000005@a2").unwrap();
        let diff: f64 = one.iter().zip(&two).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.0 && diff < 0.2, "diff {diff}");
    }

    #[test]
    fn config_validation() {
        let mut c = small(0, 1.5);
        assert!(synth_world(&c).is_err());
        c.zero_shot_informativeness = 0.5;
        c.n_classes = 9;
        assert!(matches!(synth_world(&c), Err(SynthError::Config(_))));
    }
}
