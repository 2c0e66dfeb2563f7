use std::collections::BTreeMap;

use zsfuse::embed::synth::{synth_world, SyntheticWorld, SyntheticWorldConfig};
use zsfuse::embed::EmbeddingTable;
use zsfuse::fusion::{FusedVector, Fuser};
use zsfuse::grid::{run_grid, run_zero_shot_grid, Cell, GridError, GridInputs};
use zsfuse::head::{train, TrainConfig};
use zsfuse::manifest::{loso_folds, speaker_disjoint_split, SplitAssignment};
use zsfuse::metrics::SupportMode;

fn world(w: f64, separation: f64, per_class: usize) -> SyntheticWorld {
    synth_world(&SyntheticWorldConfig {
        zero_shot_informativeness: w,
        cluster_separation: separation,
        n_per_class: per_class,
        seed: 5,
        ..SyntheticWorldConfig::default()
    })
    .unwrap()
}

fn fast_config() -> TrainConfig {
    TrainConfig { lr: 1e-2, epochs: 10, ..TrainConfig::default() }
}

fn zero_shot_default_cell(world: &SyntheticWorld) -> f64 {
    let m = &world.manifest;
    run_zero_shot_grid(m, &world.alm_audio, &world.alm_text, &m.label_set, &[Cell::DEFAULT], SupportMode::Strict)
        .unwrap()[&Cell::DEFAULT]
}

#[test]
fn uninformative_scores_are_chance() {
    for classes in [4, 8] {
        let w = synth_world(&SyntheticWorldConfig {
            n_classes: classes,
            zero_shot_informativeness: 0.0,
            n_per_class: 10_000 / classes,
            seed: 9,
            ..SyntheticWorldConfig::default()
        })
        .unwrap();
        let uar = zero_shot_default_cell(&w);
        let chance = 1.0 / classes as f64;
        assert!((uar - chance).abs() <= 0.03, "E={classes}: {uar} vs {chance}");
    }
}

#[test]
fn fully_informative_noise_free_scores_are_perfect() {
    let w = synth_world(&SyntheticWorldConfig {
        zero_shot_informativeness: 1.0,
        prompt_jitter: 0.0,
        repeat_jitter: 0.0,
        n_per_class: 50,
        ..SyntheticWorldConfig::default()
    })
    .unwrap();
    let m = &w.manifest;
    let uars =
        run_zero_shot_grid(m, &w.alm_audio, &w.alm_text, &m.label_set, &Cell::full_grid(), SupportMode::Strict).unwrap();
    assert!(uars.values().all(|&u| u == 1.0), "{uars:?}");
}

#[test]
fn zero_shot_grid_is_deterministic() {
    let w = world(0.5, 2.0, 30);
    let m = &w.manifest;
    let run = || run_zero_shot_grid(m, &w.alm_audio, &w.alm_text, &m.label_set, &Cell::full_grid(), SupportMode::Strict).unwrap();
    assert_eq!(run(), run());
}

fn fused_features(w: &SyntheticWorld) -> BTreeMap<String, FusedVector> {
    let m = &w.manifest;
    let prompts = zsfuse::prompt::build_prompt_matrix(&m.label_set, 1).unwrap();
    let scores = zsfuse::grid::cell_scores(m, &w.alm_audio[&1], 1, &prompts, &w.alm_text).unwrap();
    let fuser = Fuser::new(w.fm.dim(), m.label_set.len());
    m.records
        .iter()
        .map(|r| (r.id.clone(), fuser.fuse(&r.id, &w.fm.get_f64(&r.id).unwrap(), &scores[&r.id]).unwrap()))
        .collect()
}

fn labels(w: &SyntheticWorld) -> BTreeMap<String, usize> {
    w.manifest.records.iter().map(|r| (r.id.clone(), w.manifest.label_index(r))).collect()
}

#[test]
fn separable_world_is_learned() {
    let w = world(1.0, 6.0, 60);
    let split = speaker_disjoint_split(&w.manifest, 6, 2, 2, 0).unwrap();
    let config = TrainConfig { lr: 1e-2, ..TrainConfig::default() };
    let outcome = train(&fused_features(&w), &labels(&w), 4, &split, &config).unwrap();
    assert!(outcome.aggregate.mean >= 0.95, "{:?}", outcome.aggregate);
    for r in &outcome.records {
        assert!(*r.per_epoch_train_loss.last().unwrap() < r.initial_train_loss);
    }
}

#[test]
fn reported_epoch_is_best_validation_epoch() {
    let w = world(0.3, 1.0, 40);
    let split = speaker_disjoint_split(&w.manifest, 6, 2, 2, 1).unwrap();
    let outcome = train(&fused_features(&w), &labels(&w), 4, &split, &fast_config()).unwrap();
    for r in &outcome.records {
        let best = r.per_epoch_val_uar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first_best = r.per_epoch_val_uar.iter().position(|&v| v == best).unwrap();
        assert_eq!(r.best_epoch, first_best, "{:?}", r.per_epoch_val_uar);
    }
}

#[test]
fn grid_has_sixteen_cells_and_a_baseline() {
    let w = world(0.6, 2.0, 30);
    let m = &w.manifest;
    let splits = vec![speaker_disjoint_split(m, 6, 2, 2, 0).unwrap()];
    let config = fast_config();
    let inputs = GridInputs::new(m, &splits, &w.fm, &w.alm_audio, &w.alm_text, &m.label_set, &config);
    let result = run_grid(&inputs).unwrap();
    assert_eq!(result.cells.len(), 16);
    assert_eq!(result.baseline.aggregate.per_seed.len(), 3);
    assert!(result.cell_aggregates().values().all(|a| a.per_seed.len() == 3));
}

#[test]
fn grid_results_do_not_depend_on_worker_count() {
    let w = world(0.6, 2.0, 20);
    let m = &w.manifest;
    let splits = vec![speaker_disjoint_split(m, 6, 2, 2, 0).unwrap()];
    let config = TrainConfig { epochs: 3, seeds: vec![0, 1], ..fast_config() };
    let mut inputs = GridInputs::new(m, &splits, &w.fm, &w.alm_audio, &w.alm_text, &m.label_set, &config);
    inputs.cells = Cell::grid(2, 2);
    inputs.workers = 1;
    let serial = run_grid(&inputs).unwrap();
    inputs.workers = 4;
    let parallel = run_grid(&inputs).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn grid_over_loso_folds_averages_folds_per_seed() {
    let w = world(0.6, 2.0, 20);
    let m = &w.manifest;
    let folds: Vec<SplitAssignment> = loso_folds(m).unwrap();
    let config = TrainConfig { epochs: 3, seeds: vec![0, 1], ..fast_config() };
    let mut inputs = GridInputs::new(m, &folds, &w.fm, &w.alm_audio, &w.alm_text, &m.label_set, &config);
    inputs.cells = vec![Cell::DEFAULT];
    let result = run_grid(&inputs).unwrap();
    let cell = &result.cells[&Cell::DEFAULT].result;
    assert_eq!(cell.folds.len(), 5);
    for seed in 0..2 {
        let by_hand = cell.folds.iter().map(|f| f.records[seed].test_uar).sum::<f64>() / 5.0;
        assert!((cell.aggregate.per_seed[seed] - by_hand).abs() < 1e-15);
    }
}

#[test]
fn grid_fails_before_training_on_missing_inputs() {
    let w = world(0.6, 2.0, 10);
    let m = &w.manifest;
    let splits = vec![speaker_disjoint_split(m, 6, 2, 2, 0).unwrap()];
    let config = fast_config();

    let mut audio = w.alm_audio.clone();
    audio.remove(&3);
    let inputs = GridInputs::new(m, &splits, &w.fm, &audio, &w.alm_text, &m.label_set, &config);
    assert!(matches!(run_grid(&inputs), Err(GridError::MissingAudioTable(3))));

    let mut text = EmbeddingTable::new("text", w.alm_text.dim()).unwrap();
    for (id, v) in w.alm_text.iter().filter(|(id, _)| !id.ends_with(":t4")) {
        text.insert(id, v.to_vec()).unwrap();
    }
    let inputs = GridInputs::new(m, &splits, &w.fm, &w.alm_audio, &text, &m.label_set, &config);
    assert!(matches!(run_grid(&inputs), Err(GridError::MissingPrompt(id)) if id.ends_with(":t4")));

    let mut inputs = GridInputs::new(m, &splits, &w.fm, &w.alm_audio, &w.alm_text, &m.label_set, &config);
    inputs.cells = vec![Cell { a: 2, t: 2 }];
    assert!(matches!(run_grid(&inputs), Err(GridError::NoDefaultCell)));
}
