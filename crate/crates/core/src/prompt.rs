//! Prompt rendering: three template kinds per class, with optional text-side
//! amplification (`"{t} instances of "` prefix for t ≥ 2).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{EmotionLabel, LabelSet, ManifestError, WordForms};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("text repeat factor must be at least 1")]
    ZeroRepeat,
    #[error("lexicon file {path}: {reason}")]
    Lexicon { path: String, reason: String },
    #[error(transparent)]
    Labels(#[from] ManifestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplateKind {
    EmotionSpeech,
    SpeakerCentric,
    VoiceAttribute,
}

impl PromptTemplateKind {
    /// Row order of the prompt matrix.
    pub const ALL: [PromptTemplateKind; 3] = [
        PromptTemplateKind::EmotionSpeech,
        PromptTemplateKind::SpeakerCentric,
        PromptTemplateKind::VoiceAttribute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptTemplateKind::EmotionSpeech => "emotion_speech",
            PromptTemplateKind::SpeakerCentric => "speaker_centric",
            PromptTemplateKind::VoiceAttribute => "voice_attribute",
        }
    }

    fn base_text(self, label: &EmotionLabel) -> String {
        match self {
            PromptTemplateKind::EmotionSpeech => format!("{} speech", label.adjective),
            PromptTemplateKind::SpeakerCentric => format!("a person speaking {}", label.adverb_phrase),
            PromptTemplateKind::VoiceAttribute => format!("{} in the voice", label.noun),
        }
    }
}

impl fmt::Display for PromptTemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub class_code: char,
    pub kind: PromptTemplateKind,
    pub t: u32,
    pub text: String,
}

/// Key under which a prompt's text embedding is stored.
pub fn prompt_id(kind: PromptTemplateKind, class_code: char, t: u32) -> String {
    format!("{}:{}:t{}", kind.as_str(), class_code, t)
}

pub fn render_prompt(label: &EmotionLabel, kind: PromptTemplateKind, t: u32) -> Result<PromptSpec, PromptError> {
    if t == 0 {
        return Err(PromptError::ZeroRepeat);
    }
    let base = kind.base_text(label);
    let text = if t == 1 { base } else { format!("{t} instances of {base}") };
    Ok(PromptSpec {
        prompt_id: prompt_id(kind, label.code, t),
        class_code: label.code,
        kind,
        t,
        text,
    })
}

/// P×E grid of rendered prompts; rows follow [`PromptTemplateKind::ALL`],
/// columns follow the label set order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMatrix {
    label_set: LabelSet,
    t: u32,
    rows: Vec<Vec<PromptSpec>>,
}

impl PromptMatrix {
    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn n_templates(&self) -> usize {
        self.rows.len()
    }

    pub fn n_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn get(&self, template: usize, class: usize) -> &PromptSpec {
        &self.rows[template][class]
    }

    pub fn rows(&self) -> &[Vec<PromptSpec>] {
        &self.rows
    }

    /// Row-major iteration (template kind, then class).
    pub fn iter(&self) -> impl Iterator<Item = &PromptSpec> {
        self.rows.iter().flatten()
    }

    /// `prompt_id<TAB>text` lines, row-major, LF-terminated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in self.iter() {
            out.push_str(&p.prompt_id);
            out.push('\t');
            out.push_str(&p.text);
            out.push('\n');
        }
        out
    }
}

pub fn build_prompt_matrix(label_set: &LabelSet, t: u32) -> Result<PromptMatrix, PromptError> {
    let rows = PromptTemplateKind::ALL
        .iter()
        .map(|&kind| {
            label_set
                .labels()
                .iter()
                .map(|label| render_prompt(label, kind, t))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PromptMatrix { label_set: label_set.clone(), t, rows })
}

/// Reads a lexicon override file: a JSON object mapping class code to
/// `{adjective, adverb_phrase, noun}`.
pub fn load_lexicon(path: &Path) -> Result<BTreeMap<char, WordForms>, PromptError> {
    let err = |reason: String| PromptError::Lexicon { path: path.display().to_string(), reason };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let raw: BTreeMap<String, WordForms> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (key, forms) in raw {
        let mut chars = key.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                out.insert(c, forms);
            }
            _ => return Err(err(format!("key {key:?} is not a single class code"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::builtin_label;
    use proptest::prelude::*;

    fn anger() -> EmotionLabel {
        builtin_label('A').unwrap()
    }

    #[test]
    fn base_forms_for_anger() {
        assert_eq!(render_prompt(&anger(), PromptTemplateKind::EmotionSpeech, 1).unwrap().text, "angry speech");
        assert_eq!(
            render_prompt(&anger(), PromptTemplateKind::SpeakerCentric, 1).unwrap().text,
            "a person speaking angrily"
        );
        assert_eq!(
            render_prompt(&anger(), PromptTemplateKind::VoiceAttribute, 1).unwrap().text,
            "anger in the voice"
        );
    }

    #[test]
    fn amplified_form() {
        let p = render_prompt(&anger(), PromptTemplateKind::EmotionSpeech, 3).unwrap();
        // Oracle: plain concatenation of prefix and base string.
        assert_eq!(p.text, String::from("3 instances of ") + "angry speech");
        assert_eq!(p.prompt_id, "emotion_speech:A:t3");
    }

    #[test]
    fn zero_repeat_rejected() {
        assert!(matches!(
            render_prompt(&anger(), PromptTemplateKind::EmotionSpeech, 0),
            Err(PromptError::ZeroRepeat)
        ));
    }

    #[test]
    fn matrix_sizes() {
        let four = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
        let m = build_prompt_matrix(&four, 1).unwrap();
        assert_eq!(m.iter().count(), 12);
        assert_eq!(m.n_templates(), 3);
        let eight = LabelSet::from_codes(&crate::manifest::BUILTIN_CODES).unwrap();
        assert_eq!(build_prompt_matrix(&eight, 1).unwrap().iter().count(), 24);
    }

    #[test]
    fn matrix_t2_prefix_everywhere() {
        let four = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
        let m = build_prompt_matrix(&four, 2).unwrap();
        assert_eq!(m.iter().count(), 12);
        assert!(m.iter().all(|p| p.text.starts_with("2 instances of ")));
    }

    #[test]
    fn columns_follow_label_order() {
        let set = LabelSet::from_codes(&['S', 'A', 'H']).unwrap();
        let m = build_prompt_matrix(&set, 1).unwrap();
        for (j, label) in set.labels().iter().enumerate() {
            for row in 0..3 {
                assert_eq!(m.get(row, j).class_code, label.code);
            }
        }
        assert_eq!(m.get(1, 0).kind, PromptTemplateKind::SpeakerCentric);
    }

    #[test]
    fn unique_ids_and_no_placeholders() {
        let all = LabelSet::from_codes(&crate::manifest::BUILTIN_CODES).unwrap();
        for t in 1..=4 {
            let m = build_prompt_matrix(&all, t).unwrap();
            let ids: std::collections::BTreeSet<_> = m.iter().map(|p| p.prompt_id.clone()).collect();
            assert_eq!(ids.len(), 24);
            assert!(m.iter().all(|p| !p.text.is_empty() && !p.text.contains('<') && !p.text.contains('{')));
        }
    }

    #[test]
    fn tsv_layout() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let tsv = build_prompt_matrix(&set, 1).unwrap().to_tsv();
        let first = tsv.lines().next().unwrap();
        assert_eq!(first, "emotion_speech:A:t1\tangry speech");
        assert_eq!(tsv.lines().count(), 6);
    }

    proptest! {
        #[test]
        fn amplification_is_prefix(code_idx in 0usize..8, kind_idx in 0usize..3, t in 2u32..50) {
            let label = builtin_label(crate::manifest::BUILTIN_CODES[code_idx]).unwrap();
            let kind = PromptTemplateKind::ALL[kind_idx];
            let base = render_prompt(&label, kind, 1).unwrap().text;
            let amp = render_prompt(&label, kind, t).unwrap().text;
            prop_assert_eq!(amp, format!("{t} instances of {base}"));
            let needle = match kind {
                PromptTemplateKind::EmotionSpeech => &label.adjective,
                PromptTemplateKind::SpeakerCentric => &label.adverb_phrase,
                PromptTemplateKind::VoiceAttribute => &label.noun,
            };
            prop_assert!(base.contains(needle.as_str()));
        }
    }
}
