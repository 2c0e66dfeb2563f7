use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ManifestError;

/// One emotion class with the word forms the prompt templates need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub code: char,
    pub name: String,
    pub adjective: String,
    pub adverb_phrase: String,
    pub noun: String,
}

impl EmotionLabel {
    pub fn new(code: char, name: &str, adjective: &str, adverb_phrase: &str, noun: &str) -> Self {
        Self {
            code,
            name: name.to_owned(),
            adjective: adjective.to_owned(),
            adverb_phrase: adverb_phrase.to_owned(),
            noun: noun.to_owned(),
        }
    }

    fn validate(&self) -> Result<(), ManifestError> {
        let forms = [
            ("name", &self.name),
            ("adjective", &self.adjective),
            ("adverb_phrase", &self.adverb_phrase),
            ("noun", &self.noun),
        ];
        for (field, value) in forms {
            if value.trim().is_empty() {
                return Err(ManifestError::EmptyWordForm { code: self.code, field });
            }
        }
        Ok(())
    }
}

/// Built-in lexicon covering the eight class codes.
pub fn builtin_label(code: char) -> Option<EmotionLabel> {
    let label = match code {
        'A' => EmotionLabel::new('A', "anger", "angry", "angrily", "anger"),
        'C' => EmotionLabel::new('C', "contempt", "contemptuous", "contemptuously", "contempt"),
        'D' => EmotionLabel::new('D', "disgust", "disgusted", "in a disgusted manner", "disgust"),
        'F' => EmotionLabel::new('F', "fear", "fearful", "fearfully", "fear"),
        'H' => EmotionLabel::new('H', "happiness", "happy", "happily", "happiness"),
        'N' => EmotionLabel::new('N', "neutral", "neutral", "neutrally", "neutrality"),
        'S' => EmotionLabel::new('S', "sadness", "sad", "sadly", "sadness"),
        'U' => EmotionLabel::new('U', "surprise", "surprised", "with surprise", "surprise"),
        _ => return None,
    };
    Some(label)
}

pub const BUILTIN_CODES: [char; 8] = ['A', 'C', 'D', 'F', 'H', 'N', 'S', 'U'];

/// Replacement word forms for one class, as read from a lexicon override file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordForms {
    pub adjective: String,
    pub adverb_phrase: String,
    pub noun: String,
}

/// Ordered set of classes. The order (alphabetical by code) fixes the index
/// of every class in score vectors, logits and confusion matrices, and lower
/// indices win argmax ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LabelSet {
    labels: Vec<EmotionLabel>,
}

impl LabelSet {
    pub fn new(mut labels: Vec<EmotionLabel>) -> Result<Self, ManifestError> {
        if labels.len() < 2 {
            return Err(ManifestError::TooFewClasses(labels.len()));
        }
        labels.sort_by_key(|l| l.code);
        for pair in labels.windows(2) {
            if pair[0].code == pair[1].code {
                return Err(ManifestError::DuplicateClassCode(pair[0].code));
            }
        }
        for label in &labels {
            label.validate()?;
        }
        Ok(Self { labels })
    }

    /// Builds a set from class codes using the built-in lexicon.
    pub fn from_codes(codes: &[char]) -> Result<Self, ManifestError> {
        let labels = codes
            .iter()
            .map(|&c| builtin_label(c).ok_or(ManifestError::UnknownClassCode(c)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(labels)
    }

    /// Parses a comma-separated list such as `A,H,N,S`.
    pub fn parse_codes(list: &str) -> Result<Self, ManifestError> {
        let mut codes = Vec::new();
        for part in list.split(',') {
            let part = part.trim();
            let mut chars = part.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => codes.push(c.to_ascii_uppercase()),
                _ => return Err(ManifestError::BadClassList(list.to_owned())),
            }
        }
        Self::from_codes(&codes)
    }

    /// Returns a copy with word forms replaced for the codes present in `overrides`.
    pub fn with_overrides(&self, overrides: &BTreeMap<char, WordForms>) -> Result<Self, ManifestError> {
        let mut labels = self.labels.clone();
        for (code, forms) in overrides {
            let label = labels
                .iter_mut()
                .find(|l| l.code == *code)
                .ok_or(ManifestError::UnknownClassCode(*code))?;
            label.adjective = forms.adjective.clone();
            label.adverb_phrase = forms.adverb_phrase.clone();
            label.noun = forms.noun.clone();
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<&EmotionLabel> {
        self.labels.get(index)
    }

    pub fn index_of(&self, code: char) -> Option<usize> {
        self.labels.iter().position(|l| l.code == code)
    }

    pub fn codes(&self) -> Vec<char> {
        self.labels.iter().map(|l| l.code).collect()
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<EmotionLabel>::deserialize(deserializer)?;
        LabelSet::new(labels).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<String> = self.labels.iter().map(|l| l.code.to_string()).collect();
        f.write_str(&codes.join(","))
    }
}
