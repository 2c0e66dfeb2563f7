//! Zero-shot scoring: cosine similarity of one audio embedding against the
//! P×E prompt matrix, column-mean prompt ensembling, argmax prediction.

use std::fmt;

use thiserror::Error;

use crate::embed::{audio_key, EmbeddingTable};
use crate::prompt::PromptMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    First,
    Second,
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operand::First => "first",
            Operand::Second => "second",
        })
    }
}

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("{0} vector has zero norm")]
    ZeroNorm(Operand),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("no text embedding for prompt {0:?}")]
    MissingPrompt(String),
    #[error("no audio embedding under key {0:?}")]
    MissingAudio(String),
    #[error("zero-norm embedding for {id:?}: {source}")]
    Degenerate { id: String, source: Box<ZeroShotError> },
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, ZeroShotError> {
    if u.len() != v.len() {
        return Err(ZeroShotError::DimMismatch { left: u.len(), right: v.len() });
    }
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 {
        return Err(ZeroShotError::ZeroNorm(Operand::First));
    }
    if vv == 0.0 {
        return Err(ZeroShotError::ZeroNorm(Operand::Second));
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine scores of one utterance, `values[template][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub utterance_id: String,
    pub values: Vec<Vec<f64>>,
}

/// Prompt-ensembled score vector `s`, one entry per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotVector {
    pub utterance_id: String,
    pub s: Vec<f64>,
}

pub fn score_matrix(
    utterance_id: &str,
    audio_emb: &[f64],
    prompts: &PromptMatrix,
    text_table: &EmbeddingTable,
) -> Result<ScoreMatrix, ZeroShotError> {
    let mut values = Vec::with_capacity(prompts.n_templates());
    for row in prompts.rows() {
        let mut scores = Vec::with_capacity(row.len());
        for prompt in row {
            let text = text_table
                .get_f64(&prompt.prompt_id)
                .ok_or_else(|| ZeroShotError::MissingPrompt(prompt.prompt_id.clone()))?;
            let score = cosine(audio_emb, &text).map_err(|e| match e {
                ZeroShotError::ZeroNorm(Operand::First) => {
                    ZeroShotError::Degenerate { id: utterance_id.to_owned(), source: Box::new(e) }
                }
                ZeroShotError::ZeroNorm(Operand::Second) => {
                    ZeroShotError::Degenerate { id: prompt.prompt_id.clone(), source: Box::new(e) }
                }
                other => other,
            })?;
            scores.push(score);
        }
        values.push(scores);
    }
    Ok(ScoreMatrix { utterance_id: utterance_id.to_owned(), values })
}

/// Column means of the score matrix.
pub fn ensemble(matrix: &ScoreMatrix) -> ZeroShotVector {
    let n_templates = matrix.values.len();
    let n_classes = matrix.values.first().map_or(0, Vec::len);
    let mut s = vec![0.0; n_classes];
    for row in &matrix.values {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for acc in &mut s {
        *acc /= n_templates as f64;
    }
    ZeroShotVector { utterance_id: matrix.utterance_id.clone(), s }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn zero_shot_predict(s: &ZeroShotVector) -> usize {
    argmax(&s.s)
}

/// Ensemble vectors for `ids`, reading audio embeddings under
/// `"{id}@a{a}"` from `audio_table`.
pub fn score_utterances<'a, I>(
    ids: I,
    audio_table: &EmbeddingTable,
    a: u32,
    prompts: &PromptMatrix,
    text_table: &EmbeddingTable,
) -> Result<Vec<ZeroShotVector>, ZeroShotError>
where
    I: IntoIterator<Item = &'a str>,
{
    ids.into_iter()
        .map(|id| {
            let key = audio_key(id, a);
            let audio = audio_table.get_f64(&key).ok_or(ZeroShotError::MissingAudio(key))?;
            Ok(ensemble(&score_matrix(id, &audio, prompts, text_table)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::LabelSet;
    use crate::prompt::build_prompt_matrix;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // Oracle: 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.974631846).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors_name_operand() {
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(ZeroShotError::ZeroNorm(Operand::First))));
        assert!(matches!(cosine(&[1.0, 0.0], &[0.0, 0.0]), Err(ZeroShotError::ZeroNorm(Operand::Second))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(ZeroShotError::DimMismatch { .. })));
    }

    fn text_table_with(matrix: &PromptMatrix, f: impl Fn(usize, usize) -> Vec<f32>) -> EmbeddingTable {
        let dim = f(0, 0).len();
        let mut t = EmbeddingTable::new("text", dim).unwrap();
        for (p, row) in matrix.rows().iter().enumerate() {
            for (e, spec) in row.iter().enumerate() {
                t.insert(spec.prompt_id.clone(), f(p, e)).unwrap();
            }
        }
        t
    }

    #[test]
    fn self_similarity_gives_ones() {
        let set = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
        let m = build_prompt_matrix(&set, 1).unwrap();
        let audio = [0.3f32, -0.2, 0.9];
        let table = text_table_with(&m, |_, _| audio.to_vec());
        let audio64: Vec<f64> = audio.iter().map(|&x| f64::from(x)).collect();
        let sm = score_matrix("u", &audio64, &m, &table).unwrap();
        assert_eq!(sm.values.len(), 3);
        for row in &sm.values {
            assert_eq!(row.len(), 4);
            for &v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_gives_zeros() {
        let set = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
        let m = build_prompt_matrix(&set, 1).unwrap();
        let table = text_table_with(&m, |p, e| vec![0.0, (p + 1) as f32, (e + 1) as f32]);
        let sm = score_matrix("u", &[5.0, 0.0, 0.0], &m, &table).unwrap();
        assert!(sm.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_prompt_is_named() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let m = build_prompt_matrix(&set, 2).unwrap();
        let table = EmbeddingTable::new("text", 2).unwrap();
        match score_matrix("u", &[1.0, 0.0], &m, &table) {
            Err(ZeroShotError::MissingPrompt(id)) => assert_eq!(id, "emotion_speech:A:t2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ensemble_examples() {
        let m = ScoreMatrix { utterance_id: "u".into(), values: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]] };
        assert_eq!(ensemble(&m).s, vec![0.5, 0.5]);
        let single = ScoreMatrix { utterance_id: "u".into(), values: vec![vec![0.1, -0.4, 0.7]] };
        assert_eq!(ensemble(&single).s, vec![0.1, -0.4, 0.7]);
    }

    #[test]
    fn predict_examples() {
        let v = |s: Vec<f64>| ZeroShotVector { utterance_id: "u".into(), s };
        assert_eq!(zero_shot_predict(&v(vec![0.1, 0.9, 0.2, 0.2])), 1);
        assert_eq!(zero_shot_predict(&v(vec![0.5, 0.5, 0.1, 0.1])), 0);
    }

    proptest! {
        #[test]
        fn argmax_affine_invariant(
            s in proptest::collection::vec(-1.0f64..1.0, 2..9),
            c in 0.01f64..100.0,
            b in -10.0f64..10.0,
        ) {
            // Affine maps can merge near-equal entries under rounding; only
            // compare when the maximum is clearly separated.
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            let shifted: Vec<f64> = s.iter().map(|x| c * x + b).collect();
            prop_assert_eq!(argmax(&shifted), argmax(&s));
        }

        #[test]
        fn ensemble_scale_invariant(
            audio in proptest::collection::vec(-1.0f64..1.0, 6),
            scale in 0.001f64..1000.0,
            text in proptest::collection::vec(-1.0f32..1.0, 6 * 12),
        ) {
            prop_assume!(audio.iter().any(|x| x.abs() > 1e-3));
            let set = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
            let m = build_prompt_matrix(&set, 1).unwrap();
            let table = text_table_with(&m, |p, e| {
                let k = (p * 4 + e) * 6;
                let mut v = text[k..k + 6].to_vec();
                v[0] += 2.0;
                v
            });
            let scaled: Vec<f64> = audio.iter().map(|x| x * scale).collect();
            let s1 = ensemble(&score_matrix("u", &audio, &m, &table).unwrap()).s;
            let s2 = ensemble(&score_matrix("u", &scaled, &m, &table).unwrap()).s;
            for (x, y) in s1.iter().zip(&s2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
