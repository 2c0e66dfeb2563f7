//! The audio-repeat × text-repeat amplification grid: fused training per
//! cell plus the FM-only baseline, and the training-free zero-shot grid.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{audio_key, EmbeddingTable};
use crate::fusion::{FusedVector, Fuser, FusionError, DEFAULT_EPSILON};
use crate::head::{train, TrainConfig, TrainError, TrainOutcome};
use crate::manifest::{DatasetManifest, LabelSet, ManifestError, SplitAssignment};
use crate::metrics::{aggregate_folds, uar, AggregateResult, MetricsError, SupportMode};
use crate::prompt::{build_prompt_matrix, PromptError, PromptMatrix};
use crate::zeroshot::{argmax, score_utterances, ZeroShotError};

pub const MAX_REPEAT: u32 = 4;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("repeat factors must lie in 1..={MAX_REPEAT}, got a={a} t={t}")]
    BadCell { a: u32, t: u32 },
    #[error("grid has no cells")]
    EmptyGrid,
    #[error("grid needs at least one split")]
    NoSplits,
    #[error("the default cell a1×t1 is not part of the grid")]
    NoDefaultCell,
    #[error("no audio table for repeat factor a={0}")]
    MissingAudioTable(u32),
    #[error("audio table for a={a} has no entry {key:?}")]
    MissingAudio { a: u32, key: String },
    #[error("text table has no embedding for prompt {0:?}")]
    MissingPrompt(String),
    #[error("FM table has no entry for {0:?}")]
    MissingFm(String),
    #[error("label set {given} does not match the manifest's {manifest}")]
    LabelMismatch { given: String, manifest: String },
    #[error("{what} dims disagree: {left} vs {right}")]
    DimMismatch { what: &'static str, left: usize, right: usize },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("cell {cell}: {source}")]
    Cell { cell: Cell, source: Box<GridError> },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One amplification setting. `(0, 0)` is reserved for the FM-only
/// baseline and is never a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub a: u32,
    pub t: u32,
}

impl Cell {
    pub const BASELINE: Cell = Cell { a: 0, t: 0 };
    pub const DEFAULT: Cell = Cell { a: 1, t: 1 };

    pub fn new(a: u32, t: u32) -> Result<Self, GridError> {
        if !(1..=MAX_REPEAT).contains(&a) || !(1..=MAX_REPEAT).contains(&t) {
            return Err(GridError::BadCell { a, t });
        }
        Ok(Self { a, t })
    }

    pub fn is_baseline(self) -> bool {
        self == Self::BASELINE
    }

    /// The 16 cells `[1..4] × [1..4]`, a-major.
    pub fn full_grid() -> Vec<Cell> {
        Self::grid(MAX_REPEAT, MAX_REPEAT)
    }

    pub fn grid(a_max: u32, t_max: u32) -> Vec<Cell> {
        (1..=a_max.min(MAX_REPEAT))
            .flat_map(|a| (1..=t_max.min(MAX_REPEAT)).map(move |t| Cell { a, t }))
            .collect()
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}×t{}", self.a, self.t)
    }
}

/// Borrowed inputs of a grid run. All tables are read-only and shared
/// across workers.
pub struct GridInputs<'a> {
    pub manifest: &'a DatasetManifest,
    /// One split, or one per cross-validation fold.
    pub splits: &'a [SplitAssignment],
    pub fm: &'a EmbeddingTable,
    pub alm_audio: &'a BTreeMap<u32, EmbeddingTable>,
    pub text: &'a EmbeddingTable,
    pub label_set: &'a LabelSet,
    pub train_config: &'a TrainConfig,
    pub epsilon: f64,
    pub cells: Vec<Cell>,
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
}

impl<'a> GridInputs<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        manifest: &'a DatasetManifest,
        splits: &'a [SplitAssignment],
        fm: &'a EmbeddingTable,
        alm_audio: &'a BTreeMap<u32, EmbeddingTable>,
        text: &'a EmbeddingTable,
        label_set: &'a LabelSet,
        train_config: &'a TrainConfig,
    ) -> Self {
        Self {
            manifest,
            splits,
            fm,
            alm_audio,
            text,
            label_set,
            train_config,
            epsilon: DEFAULT_EPSILON,
            cells: Cell::full_grid(),
            workers: 0,
        }
    }
}

/// Training results of one system (a grid cell or the baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutcome {
    /// One outcome per fold, in split order.
    pub folds: Vec<TrainOutcome>,
    /// Seed aggregate; with several folds each seed is first averaged over
    /// folds.
    pub aggregate: AggregateResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: SystemOutcome,
    /// Ensemble score vector of every manifest utterance.
    pub scores: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub best: (Cell, AggregateResult),
    pub default: AggregateResult,
    pub worst: (Cell, AggregateResult),
    pub range_delta: f64,
    pub no_alm_baseline: AggregateResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: BTreeMap<Cell, CellOutcome>,
    pub baseline: SystemOutcome,
    pub summary: GridSummary,
}

impl GridResult {
    pub fn cell_aggregates(&self) -> BTreeMap<Cell, AggregateResult> {
        self.cells.iter().map(|(c, o)| (*c, o.result.aggregate.clone())).collect()
    }
}

fn check_label_set(manifest: &DatasetManifest, label_set: &LabelSet) -> Result<(), GridError> {
    if manifest.label_set.codes() != label_set.codes() {
        return Err(GridError::LabelMismatch { given: label_set.to_string(), manifest: manifest.label_set.to_string() });
    }
    Ok(())
}

/// Checks that every table entry any cell will need exists, so that a
/// grid never fails halfway through training.
fn validate_zero_shot_inputs(
    manifest: &DatasetManifest,
    alm_audio: &BTreeMap<u32, EmbeddingTable>,
    text: &EmbeddingTable,
    label_set: &LabelSet,
    cells: &[Cell],
) -> Result<BTreeMap<u32, PromptMatrix>, GridError> {
    if cells.is_empty() {
        return Err(GridError::EmptyGrid);
    }
    for c in cells {
        Cell::new(c.a, c.t)?;
    }
    check_label_set(manifest, label_set)?;

    let a_values: std::collections::BTreeSet<u32> = cells.iter().map(|c| c.a).collect();
    for a in a_values {
        let table = alm_audio.get(&a).ok_or(GridError::MissingAudioTable(a))?;
        if table.dim() != text.dim() {
            return Err(GridError::DimMismatch { what: "ALM audio/text", left: table.dim(), right: text.dim() });
        }
        for rec in &manifest.records {
            let key = audio_key(&rec.id, a);
            if !table.contains(&key) {
                return Err(GridError::MissingAudio { a, key });
            }
        }
    }

    let mut matrices = BTreeMap::new();
    for t in cells.iter().map(|c| c.t) {
        if matrices.contains_key(&t) {
            continue;
        }
        let matrix = build_prompt_matrix(label_set, t)?;
        if let Some(p) = matrix.iter().find(|p| !text.contains(&p.prompt_id)) {
            return Err(GridError::MissingPrompt(p.prompt_id.clone()));
        }
        matrices.insert(t, matrix);
    }
    Ok(matrices)
}

fn labels_by_id(manifest: &DatasetManifest) -> BTreeMap<String, usize> {
    manifest.records.iter().map(|r| (r.id.clone(), manifest.label_index(r))).collect()
}

fn fm_features(manifest: &DatasetManifest, fm: &EmbeddingTable) -> Result<BTreeMap<String, Vec<f64>>, GridError> {
    manifest
        .records
        .iter()
        .map(|r| {
            let h = fm.get_f64(&r.id).ok_or_else(|| GridError::MissingFm(r.id.clone()))?;
            Ok((r.id.clone(), h))
        })
        .collect()
}

/// Ensemble score vectors of all manifest utterances for one cell.
pub fn cell_scores(
    manifest: &DatasetManifest,
    audio: &EmbeddingTable,
    a: u32,
    prompts: &PromptMatrix,
    text: &EmbeddingTable,
) -> Result<BTreeMap<String, Vec<f64>>, GridError> {
    let vectors = score_utterances(manifest.records.iter().map(|r| r.id.as_str()), audio, a, prompts, text)?;
    Ok(vectors.into_iter().map(|v| (v.utterance_id, v.s)).collect())
}

/// Folds a per-fold outcome list into one seed aggregate.
pub fn combine_folds(folds: Vec<TrainOutcome>, config: &TrainConfig) -> Result<SystemOutcome, GridError> {
    let aggregate = if folds.len() == 1 {
        folds[0].aggregate.clone()
    } else {
        let per_fold: Vec<Vec<f64>> =
            folds.iter().map(|o| o.records.iter().map(|r| r.test_uar).collect()).collect();
        aggregate_folds(&per_fold, config.std_convention)?.fold_then_seed
    };
    Ok(SystemOutcome { folds, aggregate })
}

/// A system key (`None` = FM-only), its fused features and its raw scores.
type SystemFeatures = (Option<Cell>, BTreeMap<String, FusedVector>, BTreeMap<String, Vec<f64>>);

pub fn run_grid(inputs: &GridInputs<'_>) -> Result<GridResult, GridError> {
    let matrices =
        validate_zero_shot_inputs(inputs.manifest, inputs.alm_audio, inputs.text, inputs.label_set, &inputs.cells)?;
    if !inputs.cells.contains(&Cell::DEFAULT) {
        return Err(GridError::NoDefaultCell);
    }
    if inputs.splits.is_empty() {
        return Err(GridError::NoSplits);
    }
    for split in inputs.splits {
        split.check_covers(inputs.manifest)?;
    }
    inputs.train_config.validate()?;
    let fm = fm_features(inputs.manifest, inputs.fm)?;
    let labels = labels_by_id(inputs.manifest);
    let n_classes = inputs.label_set.len();
    let fuser = Fuser::new(inputs.fm.dim(), n_classes).with_epsilon(inputs.epsilon);

    let mut cells = inputs.cells.clone();
    cells.sort();
    cells.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inputs.workers)
        .build()
        .map_err(|e| GridError::Pool(e.to_string()))?;

    pool.install(|| {
        let in_cell = |cell: Cell| move |e: GridError| GridError::Cell { cell, source: Box::new(e) };

        // Fused features per system; `None` is the FM-only baseline.
        let systems: Vec<SystemFeatures> =
            std::iter::once(None)
                .chain(cells.iter().copied().map(Some))
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|system| -> Result<_, GridError> {
                    match system {
                        None => {
                            let features = fm
                                .iter()
                                .map(|(id, h)| Ok((id.clone(), fuser.fuse_none(id, h)?)))
                                .collect::<Result<BTreeMap<_, _>, FusionError>>()?;
                            Ok((None, features, BTreeMap::new()))
                        }
                        Some(cell) => {
                            let audio = &inputs.alm_audio[&cell.a];
                            let scores = cell_scores(inputs.manifest, audio, cell.a, &matrices[&cell.t], inputs.text)
                                .map_err(in_cell(cell))?;
                            let features = fm
                                .iter()
                                .map(|(id, h)| Ok((id.clone(), fuser.fuse(id, h, &scores[id])?)))
                                .collect::<Result<BTreeMap<_, _>, FusionError>>()
                                .map_err(|e| in_cell(cell)(e.into()))?;
                            Ok((Some(cell), features, scores))
                        }
                    }
                })
                .collect::<Result<_, _>>()?;

        let jobs: Vec<(usize, usize)> =
            (0..systems.len()).flat_map(|s| (0..inputs.splits.len()).map(move |f| (s, f))).collect();
        let trained: Vec<TrainOutcome> = jobs
            .par_iter()
            .map(|&(s, f)| {
                let (system, features, _) = &systems[s];
                train(features, &labels, n_classes, &inputs.splits[f], inputs.train_config).map_err(|e| match system {
                    Some(cell) => in_cell(*cell)(e.into()),
                    None => e.into(),
                })
            })
            .collect::<Result<_, GridError>>()?;

        let mut trained = trained.into_iter();
        let mut baseline = None;
        let mut out = BTreeMap::new();
        for (system, _, scores) in systems {
            let folds: Vec<TrainOutcome> = trained.by_ref().take(inputs.splits.len()).collect();
            let result = combine_folds(folds, inputs.train_config)?;
            match system {
                None => baseline = Some(result),
                Some(cell) => {
                    out.insert(cell, CellOutcome { cell, result, scores });
                }
            }
        }
        let baseline = baseline.expect("baseline system is always first");
        let aggregates = out.iter().map(|(c, o)| (*c, o.result.aggregate.clone())).collect();
        let summary = summarize(&aggregates, baseline.aggregate.clone())?;
        Ok(GridResult { cells: out, baseline, summary })
    })
}

/// Best/default/worst over the cell map. Ties on the mean go to the
/// lexicographically lower `(a, t)`.
pub fn summarize(cells: &BTreeMap<Cell, AggregateResult>, baseline: AggregateResult) -> Result<GridSummary, GridError> {
    let default = cells.get(&Cell::DEFAULT).ok_or(GridError::NoDefaultCell)?.clone();
    let mut best: Option<(Cell, &AggregateResult)> = None;
    let mut worst: Option<(Cell, &AggregateResult)> = None;
    // BTreeMap iterates in ascending (a, t), so strict comparisons keep the
    // lowest cell on ties.
    for (cell, agg) in cells {
        if best.is_none_or(|(_, b)| agg.mean > b.mean) {
            best = Some((*cell, agg));
        }
        if worst.is_none_or(|(_, w)| agg.mean < w.mean) {
            worst = Some((*cell, agg));
        }
    }
    let (best_cell, best_agg) = best.ok_or(GridError::EmptyGrid)?;
    let (worst_cell, worst_agg) = worst.ok_or(GridError::EmptyGrid)?;
    Ok(GridSummary {
        range_delta: best_agg.mean - worst_agg.mean,
        best: (best_cell, best_agg.clone()),
        default,
        worst: (worst_cell, worst_agg.clone()),
        no_alm_baseline: baseline,
    })
}

/// Zero-shot UAR of every cell over all manifest utterances. No training,
/// no randomness.
pub fn run_zero_shot_grid(
    manifest: &DatasetManifest,
    alm_audio: &BTreeMap<u32, EmbeddingTable>,
    text: &EmbeddingTable,
    label_set: &LabelSet,
    cells: &[Cell],
    mode: SupportMode,
) -> Result<BTreeMap<Cell, f64>, GridError> {
    let matrices = validate_zero_shot_inputs(manifest, alm_audio, text, label_set, cells)?;
    let truth: Vec<usize> = manifest.records.iter().map(|r| manifest.label_index(r)).collect();
    let mut out = BTreeMap::new();
    for &cell in cells {
        let scores = cell_scores(manifest, &alm_audio[&cell.a], cell.a, &matrices[&cell.t], text)?;
        let preds: Vec<usize> = manifest.records.iter().map(|r| argmax(&scores[&r.id])).collect();
        out.insert(cell, uar(&preds, &truth, label_set.len(), mode)?);
    }
    Ok(out)
}

/// `a,t,mean,std` rows, the baseline first as `0,0`.
pub fn cells_csv(cells: &BTreeMap<Cell, AggregateResult>, baseline: Option<&AggregateResult>) -> String {
    let mut out = String::from("a,t,mean,std\n");
    if let Some(b) = baseline {
        out.push_str(&format!("0,0,{:.6},{:.6}\n", b.mean, b.std));
    }
    for (cell, agg) in cells {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", cell.a, cell.t, agg.mean, agg.std));
    }
    out
}

/// Rows are audio repeats, columns text repeats. Cells absent from the map
/// are left empty.
pub fn heatmap_csv(uars: &BTreeMap<Cell, f64>) -> String {
    let a_max = uars.keys().map(|c| c.a).max().unwrap_or(0);
    let t_max = uars.keys().map(|c| c.t).max().unwrap_or(0);
    let mut out = String::from("a");
    for t in 1..=t_max {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    for a in 1..=a_max {
        out.push_str(&format!("a{a}"));
        for t in 1..=t_max {
            match uars.get(&Cell { a, t }) {
                Some(v) => out.push_str(&format!(",{v:.6}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
