use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ManifestError};

/// Ids listed in coverage errors are capped at this many.
const MAX_REPORTED_IDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train/val/test assignment of every utterance id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mapping: BTreeMap<String, Partition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_index: Option<usize>,
}

impl SplitAssignment {
    pub fn new(mapping: BTreeMap<String, Partition>, fold_index: Option<usize>) -> Result<Self, ManifestError> {
        for part in Partition::ALL {
            if !mapping.values().any(|&p| p == part) {
                return Err(ManifestError::EmptyPartition(part));
            }
        }
        Ok(Self { mapping, fold_index })
    }

    /// Ids of one partition in ascending order.
    pub fn ids(&self, partition: Partition) -> Vec<&str> {
        self.mapping
            .iter()
            .filter(|(_, &p)| p == partition)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.mapping.values().filter(|&&p| p == partition).count()
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.mapping.get(id).copied()
    }

    /// Verifies that the split assigns exactly the manifest's ids.
    pub fn check_covers(&self, manifest: &DatasetManifest) -> Result<(), ManifestError> {
        let missing: Vec<&str> = manifest
            .records
            .iter()
            .filter(|r| !self.mapping.contains_key(&r.id))
            .map(|r| r.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(ManifestError::Coverage(format!(
                "{} manifest ids unassigned (first: {})",
                missing.len(),
                missing.iter().take(MAX_REPORTED_IDS).copied().collect::<Vec<_>>().join(", ")
            )));
        }
        if self.mapping.len() != manifest.len() {
            let known: BTreeSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
            let extra: Vec<&str> =
                self.mapping.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
            return Err(ManifestError::Coverage(format!(
                "{} split ids not in manifest (first: {})",
                extra.len(),
                extra.iter().take(MAX_REPORTED_IDS).copied().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        let raw: SplitAssignment = serde_json::from_str(&text)
            .map_err(|source| ManifestError::Json { path: path.display().to_string(), source })?;
        Self::new(raw.mapping, raw.fold_index)
    }
}

/// Assigns whole speakers to partitions after a seeded shuffle of the
/// sorted speaker list.
pub fn speaker_disjoint_split(
    manifest: &DatasetManifest,
    n_train_speakers: usize,
    n_val_speakers: usize,
    n_test_speakers: usize,
    seed: u64,
) -> Result<SplitAssignment, ManifestError> {
    let mut speakers: Vec<&str> = manifest
        .records
        .iter()
        .map(|r| r.speaker_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let requested = n_train_speakers + n_val_speakers + n_test_speakers;
    if requested != speakers.len() {
        return Err(ManifestError::SpeakerCountMismatch { requested, actual: speakers.len() });
    }
    for (n, part) in [n_train_speakers, n_val_speakers, n_test_speakers].into_iter().zip(Partition::ALL) {
        if n == 0 {
            return Err(ManifestError::EmptyPartition(part));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    speakers.shuffle(&mut rng);

    let mut speaker_part: BTreeMap<&str, Partition> = BTreeMap::new();
    for (i, spk) in speakers.iter().enumerate() {
        let part = if i < n_train_speakers {
            Partition::Train
        } else if i < n_train_speakers + n_val_speakers {
            Partition::Val
        } else {
            Partition::Test
        };
        speaker_part.insert(spk, part);
    }

    let mapping = manifest
        .records
        .iter()
        .map(|r| (r.id.clone(), speaker_part[r.speaker_id.as_str()]))
        .collect();
    SplitAssignment::new(mapping, None)
}

/// One fold per session: the session is the test set, the next session in
/// sorted order (wrapping around) is validation, the rest is training.
pub fn loso_folds(manifest: &DatasetManifest) -> Result<Vec<SplitAssignment>, ManifestError> {
    let mut sessions = BTreeSet::new();
    for rec in &manifest.records {
        match &rec.session_id {
            Some(s) => {
                sessions.insert(s.as_str());
            }
            None => return Err(ManifestError::MissingSession(rec.id.clone())),
        }
    }
    let sessions: Vec<&str> = sessions.into_iter().collect();
    let n = sessions.len();
    if n < 3 {
        return Err(ManifestError::TooFewSessions(n));
    }

    let mut folds = Vec::with_capacity(n);
    for (fold, test_session) in sessions.iter().enumerate() {
        let val_session = sessions[(fold + 1) % n];
        let mapping = manifest
            .records
            .iter()
            .map(|r| {
                let s = r.session_id.as_deref().expect("checked above");
                let part = if s == *test_session {
                    Partition::Test
                } else if s == val_session {
                    Partition::Val
                } else {
                    Partition::Train
                };
                (r.id.clone(), part)
            })
            .collect();
        folds.push(SplitAssignment::new(mapping, Some(fold))?);
    }
    Ok(folds)
}

/// Parses `id<TAB>tag` lines with tags train/dev/test1/test2.
pub fn parse_provided_partitions(text: &str) -> Result<BTreeMap<String, Partition>, ManifestError> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (id, tag) = line.split_once('\t').ok_or_else(|| ManifestError::PartitionSyntax {
            line: lineno + 1,
            reason: "expected id<TAB>tag".into(),
        })?;
        let part = match tag {
            "train" => Partition::Train,
            "dev" => Partition::Val,
            "test1" | "test2" => Partition::Test,
            _ => return Err(ManifestError::UnknownTag { id: id.to_owned(), tag: tag.to_owned() }),
        };
        if out.insert(id.to_owned(), part).is_some() {
            return Err(ManifestError::PartitionSyntax { line: lineno + 1, reason: format!("duplicate id {id:?}") });
        }
    }
    Ok(out)
}

pub fn load_provided_partitions(manifest: &DatasetManifest, partition_file: &Path) -> Result<SplitAssignment, ManifestError> {
    let text = fs::read_to_string(partition_file)
        .map_err(|source| ManifestError::Io { path: partition_file.display().to_string(), source })?;
    provided_partitions_from_str(manifest, &text)
}

pub(crate) fn provided_partitions_from_str(manifest: &DatasetManifest, text: &str) -> Result<SplitAssignment, ManifestError> {
    let mut parsed = parse_provided_partitions(text)?;

    let missing: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| !parsed.contains_key(&r.id))
        .map(|r| r.id.clone())
        .take(MAX_REPORTED_IDS)
        .collect();
    if !missing.is_empty() {
        return Err(ManifestError::MissingFromPartitionFile(missing));
    }

    let mut mapping = BTreeMap::new();
    for rec in &manifest.records {
        let part = parsed.remove(&rec.id).expect("coverage checked");
        mapping.insert(rec.id.clone(), part);
    }
    if !parsed.is_empty() {
        return Err(ManifestError::UnknownInPartitionFile(
            parsed.into_keys().take(MAX_REPORTED_IDS).collect(),
        ));
    }
    SplitAssignment::new(mapping, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{LabelSet, UtteranceRecord};

    fn manifest_with(speakers: usize, per_speaker: usize, sessions: Option<usize>) -> DatasetManifest {
        let set = LabelSet::from_codes(&['A', 'H', 'N', 'S']).unwrap();
        let codes = set.codes();
        let mut records = Vec::new();
        for s in 0..speakers {
            for u in 0..per_speaker {
                records.push(UtteranceRecord {
                    id: format!("spk{s:02}_u{u:02}"),
                    speaker_id: format!("spk{s:02}"),
                    session_id: sessions.map(|n| format!("Ses{:02}", s % n + 1)),
                    label_code: codes[u % codes.len()],
                    duration_s: 3.7,
                    audio_path: None,
                });
            }
        }
        DatasetManifest::new("synthetic", set, records).unwrap()
    }

    #[test]
    fn speaker_split_reproduces_448_112_112() {
        let m = manifest_with(24, 28, None);
        let split = speaker_disjoint_split(&m, 16, 4, 4, 0).unwrap();
        assert_eq!(split.count(Partition::Train), 448);
        assert_eq!(split.count(Partition::Val), 112);
        assert_eq!(split.count(Partition::Test), 112);
    }

    #[test]
    fn speaker_split_empty_test_is_error() {
        let m = manifest_with(2, 3, None);
        let err = speaker_disjoint_split(&m, 1, 1, 0, 0).unwrap_err();
        assert!(matches!(err, ManifestError::EmptyPartition(Partition::Test)));
    }

    #[test]
    fn speaker_split_count_mismatch_names_totals() {
        let m = manifest_with(5, 2, None);
        let err = speaker_disjoint_split(&m, 2, 1, 1, 0).unwrap_err();
        assert!(matches!(err, ManifestError::SpeakerCountMismatch { requested: 4, actual: 5 }));
        assert!(err.to_string().contains("4") && err.to_string().contains("5"));
    }

    #[test]
    fn speaker_split_seeded() {
        let m = manifest_with(3, 4, None);
        let a = speaker_disjoint_split(&m, 1, 1, 1, 7).unwrap();
        let b = speaker_disjoint_split(&m, 1, 1, 1, 7).unwrap();
        assert_eq!(a, b);
        // Different seeds may or may not collide on 3 speakers, but each must
        // stay speaker-disjoint.
        for seed in [7, 8] {
            let split = speaker_disjoint_split(&m, 1, 1, 1, seed).unwrap();
            let mut owner: BTreeMap<&str, Partition> = BTreeMap::new();
            for rec in &m.records {
                let p = split.partition_of(&rec.id).unwrap();
                assert_eq!(*owner.entry(rec.speaker_id.as_str()).or_insert(p), p);
            }
        }
    }

    #[test]
    fn loso_wraps_validation_session() {
        let m = manifest_with(10, 3, Some(5));
        let folds = loso_folds(&m).unwrap();
        assert_eq!(folds.len(), 5);
        // Fold index 2 holds session 3 as test.
        let fold = &folds[2];
        let sessions_of = |part: Partition| -> BTreeSet<String> {
            fold.ids(part)
                .into_iter()
                .map(|id| m.get(id).unwrap().session_id.clone().unwrap())
                .collect()
        };
        assert_eq!(sessions_of(Partition::Test), BTreeSet::from(["Ses03".to_string()]));
        assert_eq!(sessions_of(Partition::Val), BTreeSet::from(["Ses04".to_string()]));
        assert_eq!(
            sessions_of(Partition::Train),
            ["Ses01", "Ses02", "Ses05"].iter().map(|s| s.to_string()).collect()
        );
        // Last fold wraps: test Ses05, val Ses01.
        let last = &folds[4];
        let val_ids = last.ids(Partition::Val);
        assert!(val_ids.iter().all(|id| m.get(id).unwrap().session_id.as_deref() == Some("Ses01")));
    }

    #[test]
    fn loso_minimum_three_sessions() {
        let m = manifest_with(3, 2, Some(3));
        let folds = loso_folds(&m).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert_eq!(f.count(Partition::Train), 2);
        }
        let two = manifest_with(2, 2, Some(2));
        assert!(matches!(loso_folds(&two), Err(ManifestError::TooFewSessions(2))));
    }

    #[test]
    fn loso_missing_session_names_record() {
        let mut m = manifest_with(3, 1, Some(3));
        m.records[1].session_id = None;
        let err = loso_folds(&m).unwrap_err();
        assert!(matches!(err, ManifestError::MissingSession(ref id) if id == "spk01_u00"));
    }

    fn four_record_manifest() -> DatasetManifest {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let records = (1..=4)
            .map(|i| UtteranceRecord {
                id: format!("u{i}"),
                speaker_id: "s".into(),
                session_id: None,
                label_code: 'A',
                duration_s: 1.0,
                audio_path: None,
            })
            .collect();
        DatasetManifest::new("p", set, records).unwrap()
    }

    #[test]
    fn provided_partitions_merge_tests() {
        let m = four_record_manifest();
        let split = provided_partitions_from_str(&m, "u1\ttrain\nu2\tdev\nu3\ttest1\nu4\ttest2\n").unwrap();
        assert_eq!(split.partition_of("u1"), Some(Partition::Train));
        assert_eq!(split.partition_of("u2"), Some(Partition::Val));
        assert_eq!(split.partition_of("u3"), Some(Partition::Test));
        assert_eq!(split.partition_of("u4"), Some(Partition::Test));
    }

    #[test]
    fn provided_partitions_missing_id() {
        let m = four_record_manifest();
        let err = provided_partitions_from_str(&m, "u1\ttrain\nu2\tdev\nu3\ttest1\n").unwrap_err();
        assert!(matches!(err, ManifestError::MissingFromPartitionFile(ref ids) if ids == &["u4".to_string()]));
        assert!(err.to_string().contains("u4"));
    }

    #[test]
    fn provided_partitions_extra_and_unknown_tag() {
        let m = four_record_manifest();
        let err = provided_partitions_from_str(&m, "u1\ttrain\nu2\tdev\nu3\ttest1\nu4\ttest2\nu9\ttrain\n")
            .unwrap_err();
        assert!(matches!(err, ManifestError::UnknownInPartitionFile(ref ids) if ids == &["u9".to_string()]));
        let err = provided_partitions_from_str(&m, "u1\tholdout\n").unwrap_err();
        assert!(matches!(err, ManifestError::UnknownTag { .. }));
    }

    #[test]
    fn provided_partitions_error_lists_at_most_ten() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let records = (0..30)
            .map(|i| UtteranceRecord {
                id: format!("u{i:02}"),
                speaker_id: "s".into(),
                session_id: None,
                label_code: 'H',
                duration_s: 1.0,
                audio_path: None,
            })
            .collect();
        let m = DatasetManifest::new("p", set, records).unwrap();
        let err = provided_partitions_from_str(&m, "u00\ttrain\n").unwrap_err();
        match err {
            ManifestError::MissingFromPartitionFile(ids) => assert_eq!(ids.len(), 10),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn provided_partitions_counts_60_15_25() {
        let set = LabelSet::from_codes(&['A', 'H']).unwrap();
        let mut records = Vec::new();
        let mut file = String::new();
        for i in 0..100 {
            let id = format!("id{i:03}");
            let tag = match i {
                0..=59 => "train",
                60..=74 => "dev",
                75..=89 => "test1",
                _ => "test2",
            };
            file.push_str(&format!("{id}\t{tag}\n"));
            records.push(UtteranceRecord {
                id,
                speaker_id: "s".into(),
                session_id: None,
                label_code: 'A',
                duration_s: 1.0,
                audio_path: None,
            });
        }
        // Oracle: count lines per tag directly from the file text.
        let count = |tags: &[&str]| file.lines().filter(|l| tags.iter().any(|t| l.ends_with(&format!("\t{t}")))).count();
        let m = DatasetManifest::new("p", set, records).unwrap();
        let split = provided_partitions_from_str(&m, &file).unwrap();
        assert_eq!(split.count(Partition::Train), count(&["train"]));
        assert_eq!(split.count(Partition::Val), count(&["dev"]));
        assert_eq!(split.count(Partition::Test), count(&["test1", "test2"]));
        assert_eq!(
            (split.count(Partition::Train), split.count(Partition::Val), split.count(Partition::Test)),
            (60, 15, 25)
        );
    }

    #[test]
    fn split_json_round_trip() {
        let m = manifest_with(3, 2, Some(3));
        let fold = loso_folds(&m).unwrap().remove(1);
        let back: SplitAssignment = serde_json::from_str(&fold.to_json()).unwrap();
        assert_eq!(fold, back);
        fold.check_covers(&m).unwrap();
    }
}
