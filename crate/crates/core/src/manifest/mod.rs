//! Dataset manifests, label sets and the three split protocols
//! (speaker-disjoint, provided partitions, leave-one-session-out).

mod labels;
mod split;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labels::{builtin_label, EmotionLabel, LabelSet, WordForms, BUILTIN_CODES};
pub use split::{
    load_provided_partitions, loso_folds, parse_provided_partitions, speaker_disjoint_split, Partition,
    SplitAssignment,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("label set needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class code {0:?} appears more than once")]
    DuplicateClassCode(char),
    #[error("unknown class code {0:?}")]
    UnknownClassCode(char),
    #[error("class {code:?} has an empty {field}")]
    EmptyWordForm { code: char, field: &'static str },
    #[error("cannot parse class list {0:?}; expected single-letter codes such as A,H,N,S")]
    BadClassList(String),
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} has label {code:?} which is not in the label set")]
    LabelNotInSet { id: String, code: char },
    #[error("record {id:?} has invalid duration {duration}")]
    BadDuration { id: String, duration: f64 },
    #[error("speaker counts sum to {requested} but the manifest has {actual} distinct speakers")]
    SpeakerCountMismatch { requested: usize, actual: usize },
    #[error("partition {0} would be empty")]
    EmptyPartition(Partition),
    #[error("record {0:?} has no session_id")]
    MissingSession(String),
    #[error("leave-one-session-out needs at least 3 sessions, found {0}")]
    TooFewSessions(usize),
    #[error("partition file line {line}: {reason}")]
    PartitionSyntax { line: usize, reason: String },
    #[error("unknown partition tag {tag:?} for id {id:?}")]
    UnknownTag { id: String, tag: String },
    #[error("ids in manifest but missing from partition file: {}", .0.join(", "))]
    MissingFromPartitionFile(Vec<String>),
    #[error("ids in partition file but not in manifest: {}", .0.join(", "))]
    UnknownInPartitionFile(Vec<String>),
    #[error("split does not cover the manifest: {0}")]
    Coverage(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed manifest {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub label_code: char,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(rename = "labels")]
    pub label_set: LabelSet,
    pub records: Vec<UtteranceRecord>,
}

#[derive(Deserialize)]
struct RawManifest {
    name: String,
    labels: LabelSet,
    records: Vec<UtteranceRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, label_set: LabelSet, records: Vec<UtteranceRecord>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            if !seen.insert(rec.id.as_str()) {
                return Err(ManifestError::DuplicateId(rec.id.clone()));
            }
            if label_set.index_of(rec.label_code).is_none() {
                return Err(ManifestError::LabelNotInSet { id: rec.id.clone(), code: rec.label_code });
            }
            if !(rec.duration_s.is_finite() && rec.duration_s >= 0.0) {
                return Err(ManifestError::BadDuration { id: rec.id.clone(), duration: rec.duration_s });
            }
        }
        Ok(Self { name: name.into(), label_set, records })
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ManifestError> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|source| ManifestError::Json { path: origin.to_owned(), source })?;
        Self::new(raw.name, raw.labels, raw.records)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Class index of every record, in record order.
    pub fn label_index(&self, record: &UtteranceRecord) -> usize {
        self.label_set
            .index_of(record.label_code)
            .expect("manifest validated label codes at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, code: char) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            speaker_id: "spk".into(),
            session_id: None,
            label_code: code,
            duration_s: 1.0,
            audio_path: None,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let err = DatasetManifest::new("d", set, vec![rec("u1", 'A'), rec("u1", 'H')]).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateId(id) if id == "u1"));
    }

    #[test]
    fn label_outside_set_rejected() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let err = DatasetManifest::new("d", set, vec![rec("u1", 'S')]).unwrap_err();
        assert!(matches!(err, ManifestError::LabelNotInSet { code: 'S', .. }));
    }

    #[test]
    fn json_round_trip() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let mut r = rec("u1", 'A');
        r.session_id = Some("s1".into());
        let m = DatasetManifest::new("d", set, vec![r, rec("u2", 'H')]).unwrap();
        let back = DatasetManifest::from_json_str(&m.to_json(), "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_with_duplicate_codes_fails() {
        let text = r#"{"name":"x","labels":[
            {"code":"A","name":"anger","adjective":"angry","adverb_phrase":"angrily","noun":"anger"},
            {"code":"A","name":"anger","adjective":"angry","adverb_phrase":"angrily","noun":"anger"}],
            "records":[]}"#;
        assert!(DatasetManifest::from_json_str(text, "mem").is_err());
    }
}
