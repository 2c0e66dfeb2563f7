//! Command-line entry point. `dispatch` maps every failure to an exit code:
//! 1 for usage errors, 2 for data or validation errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::embed::synth::{synth_world, SynthError, SyntheticWorldConfig};
use crate::embed::{parse_audio_key, read_embeddings, write_embeddings, EmbedError, EmbeddingTable};
use crate::fusion::{FusedVector, Fuser, FusionError, DEFAULT_EPSILON};
use crate::grid::report::{
    load_baseline_table, load_summary_row, load_summary_table, render_baseline_table, render_summary_table, ReportError,
    SummaryRow, SummaryTable,
};
use crate::grid::{cells_csv, heatmap_csv, run_grid, run_zero_shot_grid, Cell, GridError, GridInputs};
use crate::head::{train, TrainConfig, TrainError, TrainOutcome};
use crate::manifest::{
    load_provided_partitions, loso_folds, speaker_disjoint_split, DatasetManifest, LabelSet, ManifestError,
    SplitAssignment,
};
use crate::metrics::{ConfusionMatrix, MetricsError, StdConvention, SupportMode};
use crate::prompt::{build_prompt_matrix, load_lexicon, PromptError};
use crate::zeroshot::{score_utterances, ZeroShotError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "zsfuse", version, about = "Zero-shot score fusion for speech emotion recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the prompt matrix for a class list as TSV.
    Prompts(PromptsArgs),
    /// Partition a manifest into train/val/test.
    Split(SplitArgs),
    /// Zero-shot ensemble score vectors for every utterance.
    Score(ScoreArgs),
    /// Concatenate FM features with normalised score vectors.
    Fuse(FuseArgs),
    /// Train the classification head over fused features.
    Train(TrainArgs),
    /// UAR, per-class recall and confusion matrix of a predictions file.
    Eval(EvalArgs),
    /// Fused training over the audio × text repeat grid.
    Grid(GridArgs),
    /// Training-free zero-shot UAR over the repeat grid.
    ZsGrid(ZsGridArgs),
    /// Generate a synthetic world of embeddings and a manifest.
    Synth(SynthArgs),
    /// Render stored reference tables next to fresh grid summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    /// Comma-separated class codes, e.g. A,H,N,S.
    #[arg(long)]
    pub classes: String,
    #[arg(long, default_value_t = 1)]
    pub t: u32,
    /// JSON map of class code to word forms.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Protocol {
    Speaker,
    Loso,
    Provided,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Speaker counts train,val,test for the speaker protocol.
    #[arg(long, default_value = "16,4,4")]
    pub speakers: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Partition TSV for the provided protocol.
    #[arg(long)]
    pub partitions: Option<PathBuf>,
    /// Output file; for loso a directory receiving fold{k}.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub audio_emb: PathBuf,
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long)]
    pub classes: String,
    #[arg(long, default_value_t = 1)]
    pub t: u32,
    #[arg(long, default_value_t = 1)]
    pub a: u32,
    /// Restrict to manifest utterances; default is every key with this a.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub fm_emb: PathBuf,
    #[arg(long, required_unless_present = "none")]
    pub scores: Option<PathBuf>,
    /// FM-only baseline: copy the FM features unchanged.
    #[arg(long, conflicts_with = "scores")]
    pub none: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override the training config file.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// JSON training config; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Drop zero-support classes from UAR instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Report the n-1 standard deviation instead of the population one.
    #[arg(long)]
    pub sample_std: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Writes seed{n}.tsv test predictions here.
    #[arg(long)]
    pub preds_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TSV of `id<TAB>class_code` lines.
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; repeat once per fold.
    #[arg(long, required = true)]
    pub split: Vec<PathBuf>,
    #[arg(long)]
    pub fm_emb: PathBuf,
    /// Directory holding alm_audio_a{a}.zsem files.
    #[arg(long)]
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub a_max: u32,
    #[arg(long, default_value_t = 4)]
    pub t_max: u32,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value = "fm + alm")]
    pub system: String,
    /// Dataset label in the summary; defaults to the manifest name.
    #[arg(long)]
    pub dataset: Option<String>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZsGridArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub text_emb: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub a_max: u32,
    #[arg(long, default_value_t = 4)]
    pub t_max: u32,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON world config; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub informativeness: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory with table1.json and table2.json.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Directory searched (one level deep) for summary.json files.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prompts(a) => prompts(a),
        Command::Split(a) => split(a),
        Command::Score(a) => score(a),
        Command::Fuse(a) => fuse(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::ZsGrid(a) => zs_grid(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json { path: path.display().to_string(), source })
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

fn input_hashes(files: &[(&str, &Path)]) -> Result<BTreeMap<String, InputFile>> {
    files
        .iter()
        .map(|(role, path)| {
            Ok(((*role).to_owned(), InputFile { path: path.display().to_string(), sha256: file_sha256(path)? }))
        })
        .collect()
}

fn label_set(classes: &str, lexicon: Option<&Path>) -> Result<LabelSet> {
    let set = LabelSet::parse_codes(classes)?;
    match lexicon {
        Some(path) => Ok(set.with_overrides(&load_lexicon(path)?)?),
        None => Ok(set),
    }
}

fn prompts(args: PromptsArgs) -> Result<()> {
    let set = label_set(&args.classes, args.lexicon.as_deref())?;
    let matrix = build_prompt_matrix(&set, args.t)?;
    emit(args.out.as_deref(), &matrix.to_tsv())
}

fn parse_counts(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
    match parsed.as_deref() {
        Some(&[a, b, c]) => Ok([a, b, c]),
        _ => Err(CliError::Usage(format!("--speakers expects three comma-separated counts, got {text:?}"))),
    }
}

fn split(args: SplitArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    match args.protocol {
        Protocol::Speaker => {
            let [tr, va, te] = parse_counts(&args.speakers)?;
            let split = speaker_disjoint_split(&manifest, tr, va, te, args.seed)?;
            write_file(&args.out, split.to_json().as_bytes())
        }
        Protocol::Loso => {
            fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
            for (k, fold) in loso_folds(&manifest)?.iter().enumerate() {
                write_file(&args.out.join(format!("fold{k}.json")), fold.to_json().as_bytes())?;
            }
            Ok(())
        }
        Protocol::Provided => {
            let path = args
                .partitions
                .ok_or_else(|| CliError::Usage("--protocol provided needs --partitions".into()))?;
            let split = load_provided_partitions(&manifest, &path)?;
            write_file(&args.out, split.to_json().as_bytes())
        }
    }
}

fn score(args: ScoreArgs) -> Result<()> {
    let set = label_set(&args.classes, args.lexicon.as_deref())?;
    let prompts = build_prompt_matrix(&set, args.t)?;
    let audio = read_embeddings(&args.audio_emb)?;
    let text = read_embeddings(&args.text_emb)?;
    let ids: Vec<String> = match &args.manifest {
        Some(path) => {
            let manifest = DatasetManifest::load(path)?;
            if manifest.label_set.codes() != set.codes() {
                return Err(CliError::Data(format!("--classes {set} differ from the manifest's {}", manifest.label_set)));
            }
            manifest.records.iter().map(|r| r.id.clone()).collect()
        }
        None => audio
            .ids()
            .filter_map(|key| parse_audio_key(key).filter(|(_, a)| *a == args.a).map(|(id, _)| id.to_owned()))
            .collect(),
    };
    let vectors = score_utterances(ids.iter().map(String::as_str), &audio, args.a, &prompts, &text)?;
    let mut table = EmbeddingTable::new(format!("scores_a{}_t{}", args.a, args.t), set.len())?;
    for v in vectors {
        table.insert_f64(v.utterance_id, &v.s)?;
    }
    write_embeddings(&table, &args.out)?;
    Ok(())
}

fn fuse(args: FuseArgs) -> Result<()> {
    let fm = read_embeddings(&args.fm_emb)?;
    let fused: Vec<FusedVector> = match &args.scores {
        Some(path) => {
            let scores = read_embeddings(path)?;
            let fuser = Fuser::new(fm.dim(), scores.dim()).with_epsilon(args.epsilon);
            fm.iter()
                .map(|(id, _)| {
                    let s = scores.get_f64(id).ok_or_else(|| CliError::Data(format!("no score vector for {id:?}")))?;
                    Ok(fuser.fuse(id, &fm.get_f64(id).expect("id from table"), &s)?)
                })
                .collect::<Result<_>>()?
        }
        None => {
            let fuser = Fuser::new(fm.dim(), 0);
            fm.iter()
                .map(|(id, _)| Ok(fuser.fuse_none(id, &fm.get_f64(id).expect("id from table"))?))
                .collect::<Result<_>>()?
        }
    };
    let dim = fused.first().map_or(fm.dim(), FusedVector::dim);
    let mut table = EmbeddingTable::new("fused", dim)?;
    for v in fused {
        table.insert_f64(v.utterance_id, &v.z)?;
    }
    write_embeddings(&table, &args.out)?;
    Ok(())
}

fn resolve_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut config = match &o.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seeds) = &o.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(lr) = o.lr {
        config.lr = lr;
    }
    if let Some(epochs) = o.epochs {
        config.epochs = epochs;
    }
    if let Some(bs) = o.batch_size {
        config.batch_size = bs;
    }
    if let Some(wd) = o.weight_decay {
        config.weight_decay = wd;
    }
    if o.lenient {
        config.support_mode = SupportMode::Lenient;
    }
    if o.sample_std {
        config.std_convention = StdConvention::Sample;
    }
    config.validate()?;
    Ok(config)
}

fn labels_by_id(manifest: &DatasetManifest) -> BTreeMap<String, usize> {
    manifest.records.iter().map(|r| (r.id.clone(), manifest.label_index(r))).collect()
}

#[derive(Serialize)]
struct TrainReport<'a> {
    command: &'static str,
    config: &'a TrainConfig,
    inputs: BTreeMap<String, InputFile>,
    n_classes: usize,
    classes: String,
    outcome: &'a TrainOutcome,
}

fn write_predictions(dir: &Path, outcome: &TrainOutcome, set: &LabelSet) -> Result<()> {
    let codes = set.codes();
    for record in &outcome.records {
        let mut text = String::new();
        for (id, pred) in &record.test_predictions {
            text.push_str(&format!("{id}\t{}\n", codes[*pred]));
        }
        write_file(&dir.join(format!("seed{}.tsv", record.seed)), text.as_bytes())?;
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = resolve_config(&args.overrides)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let split = SplitAssignment::load(&args.split)?;
    split.check_covers(&manifest)?;
    let table = read_embeddings(&args.features)?;
    let features: BTreeMap<String, FusedVector> = table
        .iter()
        .map(|(id, _)| {
            let z = table.get_f64(id).expect("id from table");
            (id.to_owned(), FusedVector { utterance_id: id.to_owned(), fm_dim: z.len(), n_scores: 0, z })
        })
        .collect();
    let n_classes = manifest.label_set.len();
    let outcome = train(&features, &labels_by_id(&manifest), n_classes, &split, &config)?;

    let mut files: Vec<(&str, &Path)> =
        vec![("features", &args.features), ("manifest", &args.manifest), ("split", &args.split)];
    if let Some(c) = &args.overrides.config {
        files.push(("config", c));
    }
    let report = TrainReport {
        command: "train",
        config: &config,
        inputs: input_hashes(&files)?,
        n_classes,
        classes: manifest.label_set.to_string(),
        outcome: &outcome,
    };
    write_file(&args.out, to_json(&report).as_bytes())?;
    if let Some(dir) = &args.preds_dir {
        write_predictions(dir, &outcome, &manifest.label_set)?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let set = &manifest.label_set;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for (n, line) in read_text(&args.preds)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("{}:{}: {m}", args.preds.display(), n + 1));
        let (id, code) = line.split_once('\t').ok_or_else(|| bad("expected id<TAB>class_code"))?;
        let mut chars = code.trim().chars();
        let code = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => return Err(bad("class code must be one character")),
        };
        let pred = set.index_of(code).ok_or_else(|| bad(&format!("class {code:?} not in {set}")))?;
        let record = manifest.get(id).ok_or_else(|| bad(&format!("id {id:?} not in manifest")))?;
        preds.push(pred);
        truth.push(manifest.label_index(record));
    }
    let mode = if args.lenient { SupportMode::Lenient } else { SupportMode::Strict };
    let cm = ConfusionMatrix::from_predictions(&preds, &truth, set.len())?;
    let uar = cm.uar(mode)?;
    let names: Vec<String> = set.codes().iter().map(char::to_string).collect();

    let mut out = format!("uar\t{uar:.6}\n\nclass\trecall\tsupport\n");
    for (c, recall) in cm.recalls().iter().enumerate() {
        let r = recall.map_or_else(|| "n/a".to_owned(), |r| format!("{r:.6}"));
        out.push_str(&format!("{}\t{r}\t{}\n", names[c], cm.support(c)));
    }
    out.push('\n');
    out.push_str(&cm.to_tsv(&names));
    emit(None, &out)
}

fn load_audio_dir(dir: &Path, a_max: u32) -> Result<BTreeMap<u32, EmbeddingTable>> {
    let mut tables = BTreeMap::new();
    for a in 1..=a_max {
        let path = dir.join(format!("alm_audio_a{a}.zsem"));
        if !path.exists() {
            return Err(CliError::Data(format!("missing audio table {}", path.display())));
        }
        tables.insert(a, read_embeddings(&path)?);
    }
    Ok(tables)
}

fn check_grid_bounds(a_max: u32, t_max: u32) -> Result<()> {
    if !(1..=crate::grid::MAX_REPEAT).contains(&a_max) || !(1..=crate::grid::MAX_REPEAT).contains(&t_max) {
        return Err(CliError::Usage(format!("--a-max and --t-max must lie in 1..={}", crate::grid::MAX_REPEAT)));
    }
    Ok(())
}

#[derive(Serialize)]
struct GridReport<'a> {
    command: &'static str,
    config: GridRunConfig<'a>,
    inputs: BTreeMap<String, InputFile>,
    cells: BTreeMap<String, &'a crate::metrics::AggregateResult>,
    baseline: &'a crate::metrics::AggregateResult,
    summary: &'a SummaryRow,
}

#[derive(Serialize)]
struct GridRunConfig<'a> {
    train: &'a TrainConfig,
    epsilon: f64,
    a_max: u32,
    t_max: u32,
    folds: usize,
}

fn grid(args: GridArgs) -> Result<()> {
    check_grid_bounds(args.a_max, args.t_max)?;
    let config = resolve_config(&args.overrides)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let set = match &args.lexicon {
        Some(path) => manifest.label_set.with_overrides(&load_lexicon(path)?)?,
        None => manifest.label_set.clone(),
    };
    let splits = args.split.iter().map(|p| SplitAssignment::load(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let fm = read_embeddings(&args.fm_emb)?;
    let audio = load_audio_dir(&args.audio_dir, args.a_max)?;
    let text = read_embeddings(&args.text_emb)?;

    let mut inputs = GridInputs::new(&manifest, &splits, &fm, &audio, &text, &set, &config);
    inputs.cells = Cell::grid(args.a_max, args.t_max);
    inputs.epsilon = args.epsilon;
    inputs.workers = args.workers;
    let result = run_grid(&inputs)?;

    let dataset = args.dataset.clone().unwrap_or_else(|| manifest.name.clone());
    let row = SummaryRow::from_summary(&args.system, dataset, &result.summary);
    let aggregates = result.cell_aggregates();

    let mut files: Vec<(String, PathBuf)> = vec![
        ("manifest".into(), args.manifest.clone()),
        ("fm".into(), args.fm_emb.clone()),
        ("text".into(), args.text_emb.clone()),
    ];
    for (k, p) in args.split.iter().enumerate() {
        files.push((format!("split{k}"), p.clone()));
    }
    for a in audio.keys() {
        files.push((format!("audio_a{a}"), args.audio_dir.join(format!("alm_audio_a{a}.zsem"))));
    }
    if let Some(c) = &args.overrides.config {
        files.push(("config".into(), c.clone()));
    }
    let file_refs: Vec<(&str, &Path)> = files.iter().map(|(r, p)| (r.as_str(), p.as_path())).collect();

    let report = GridReport {
        command: "grid",
        config: GridRunConfig {
            train: &config,
            epsilon: args.epsilon,
            a_max: args.a_max,
            t_max: args.t_max,
            folds: splits.len(),
        },
        inputs: input_hashes(&file_refs)?,
        cells: result.cells.iter().map(|(c, o)| (c.to_string(), &o.result.aggregate)).collect(),
        baseline: &result.baseline.aggregate,
        summary: &row,
    };
    let table = SummaryTable { title: format!("Repeat grid summary: {}", manifest.name), rows: vec![row.clone()] };

    write_file(&args.out.join("cells.csv"), cells_csv(&aggregates, Some(&result.baseline.aggregate)).as_bytes())?;
    write_file(&args.out.join("summary.txt"), render_summary_table(&table).as_bytes())?;
    write_file(&args.out.join("summary.json"), to_json(&row).as_bytes())?;
    write_file(&args.out.join("report.json"), to_json(&report).as_bytes())?;
    emit(None, &render_summary_table(&table))
}

fn zs_grid(args: ZsGridArgs) -> Result<()> {
    check_grid_bounds(args.a_max, args.t_max)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let audio = load_audio_dir(&args.audio_dir, args.a_max)?;
    let text = read_embeddings(&args.text_emb)?;
    let mode = if args.lenient { SupportMode::Lenient } else { SupportMode::Strict };
    let uars = run_zero_shot_grid(&manifest, &audio, &text, &manifest.label_set, &Cell::grid(args.a_max, args.t_max), mode)?;
    let csv = heatmap_csv(&uars);
    write_file(&args.out.join("zs_heatmap.csv"), csv.as_bytes())?;
    emit(None, &csv)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config: SyntheticWorldConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SyntheticWorldConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(c) = args.classes {
        config.n_classes = c;
    }
    if let Some(n) = args.per_class {
        config.n_per_class = n;
    }
    if let Some(s) = args.separation {
        config.cluster_separation = s;
    }
    if let Some(w) = args.informativeness {
        config.zero_shot_informativeness = w;
    }
    let world = synth_world(&config)?;
    world.save(&args.out)?;
    write_file(&args.out.join("synth_config.json"), to_json(&config).as_bytes())
}

fn summary_files(runs: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let direct = runs.join("summary.json");
    if direct.is_file() {
        found.push(direct);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(runs)
        .map_err(io_err(runs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    found.extend(entries.into_iter().map(|d| d.join("summary.json")).filter(|p| p.is_file()));
    Ok(found)
}

fn report(args: ReportArgs) -> Result<()> {
    if args.fixtures.is_none() && args.runs.is_none() {
        return Err(CliError::Usage("report needs --fixtures, --runs or both".into()));
    }
    let mut out = String::new();
    if let Some(dir) = &args.fixtures {
        out.push_str("== Reference values (stored, not reproduced by this build) ==\n\n");
        let t1 = dir.join("table1.json");
        if t1.exists() {
            out.push_str(&render_baseline_table(&load_baseline_table(&t1)?));
            out.push('\n');
        }
        let t2 = dir.join("table2.json");
        if t2.exists() {
            out.push_str(&render_summary_table(&load_summary_table(&t2)?));
            out.push('\n');
        }
    }
    if let Some(dir) = &args.runs {
        let rows = summary_files(dir)?.iter().map(|p| load_summary_row(p)).collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(CliError::Data(format!("no summary.json under {}", dir.display())));
        }
        out.push_str("== Fresh runs ==\n\n");
        out.push_str(&render_summary_table(&SummaryTable { title: "Repeat grid summaries".into(), rows }));
    }
    emit(args.out.as_deref(), &out)
}
