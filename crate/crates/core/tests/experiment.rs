use weem_core::base_learners::{EncodingTable, FeaturizerConfig, LearnerConfig};
use weem_core::evaluation::{ablate_dataset_size, run_experiment, run_experiment_with_encodings, ExperimentConfig};
use weem_core::metafeatures::VariantKind;
use weem_core::optim::TrainConfig;
use weem_core::synthgen::{generate, SynthConfig};
use weem_core::Error;

fn small_data(n: usize) -> weem_core::data::Dataset {
    generate(&SynthConfig { n_texts: n, ..SynthConfig::default() }).unwrap().dataset
}

fn small_config(variants: Vec<VariantKind>) -> ExperimentConfig {
    ExperimentConfig {
        variants,
        seeds: vec![1, 2, 3],
        learner: LearnerConfig {
            featurizer: FeaturizerConfig { dim: 4096, ..FeaturizerConfig::default() },
            train: TrainConfig { learning_rate: 0.01, epochs: 10, ..TrainConfig::default() },
            ..LearnerConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn rows_follow_configuration() {
    let ds = small_data(300);
    let report = run_experiment(&ds, &small_config(vec![VariantKind::PC1])).unwrap();
    let names: Vec<&str> = report.rows().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["PC1", "base", "direct"]);
    for row in report.rows() {
        assert_eq!(row.per_seed.len(), 3);
        assert_eq!(row.mean, row.per_seed.iter().sum::<f64>() / 3.0);
        assert!(row.per_seed.iter().all(|f| (0.0..=1.0).contains(f)));
    }
    let no_direct = ExperimentConfig { direct: false, ..small_config(vec![]) };
    let names: Vec<String> = run_experiment(&ds, &no_direct).unwrap().rows().map(|r| r.name.clone()).collect();
    assert_eq!(names, ["base"]);
}

#[test]
fn seed_order_and_worker_count_do_not_matter() {
    let ds = small_data(300);
    let cfg = small_config(vec![VariantKind::WT1, VariantKind::SP3]);
    let a = run_experiment(&ds, &cfg).unwrap();
    let b = run_experiment(&ds, &ExperimentConfig { seeds: vec![3, 1, 2], jobs: Some(1), ..cfg.clone() }).unwrap();
    assert_eq!(a.rows().collect::<Vec<_>>(), b.rows().collect::<Vec<_>>());
    assert_eq!(a.seeds, vec![1, 2, 3]);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_summary_csv(&mut x).unwrap();
    b.write_summary_csv(&mut y).unwrap();
    assert_eq!(x, y);
}

#[test]
fn report_tables_are_consistent() {
    let ds = small_data(300);
    let report = run_experiment(&ds, &small_config(vec![VariantKind::TL1])).unwrap();
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary).unwrap();
    let summary = String::from_utf8(summary).unwrap();
    assert!(summary.starts_with("row,mean_macro_f1,n_seeds\n"));
    assert_eq!(summary.lines().count(), 4);
    let mut scores = Vec::new();
    report.write_scores_csv(&mut scores).unwrap();
    let scores = String::from_utf8(scores).unwrap();
    assert_eq!(scores.lines().count(), 1 + 3 * 3);
    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let back: weem_core::evaluation::Report = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn bad_configs_are_rejected() {
    let ds = small_data(100);
    for cfg in [
        ExperimentConfig { seeds: vec![4], ..small_config(vec![]) },
        ExperimentConfig { seeds: vec![4, 4], ..small_config(vec![]) },
        ExperimentConfig { split_ratios: [0.5, 0.3, 0.3], ..small_config(vec![]) },
        ExperimentConfig { jobs: Some(0), ..small_config(vec![]) },
        small_config(vec![VariantKind::WT1, VariantKind::WT1]),
    ] {
        assert!(matches!(run_experiment(&ds, &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn imported_encodings_drive_the_head() {
    let ds = small_data(300);
    let mut table = EncodingTable::new();
    for t in ds.texts() {
        for (j, label) in ds.schema().aux.iter().enumerate() {
            let p = if t.text.contains(&format!("{label}k")) { 0.9 } else { 0.1 + 0.01 * j as f64 };
            table.insert(&t.text_id, label, p).unwrap();
        }
    }
    let cfg = ExperimentConfig { direct: false, ..small_config(vec![VariantKind::WT1]) };
    let report = run_experiment_with_encodings(&ds, &cfg, &table).unwrap();
    assert_eq!(report.rows().count(), 2);

    let mut partial = EncodingTable::new();
    for (id, label, p) in table.iter().skip(1) {
        partial.insert(id, label, p).unwrap();
    }
    match run_experiment_with_encodings(&ds, &cfg, &partial) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "encode");
            assert!(matches!(*source, Error::Completeness { .. }));
        }
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn full_size_ablation_matches_experiment() {
    let ds = small_data(400);
    let cfg = ExperimentConfig { seeds: vec![1, 2], ..small_config(vec![VariantKind::WT1]) };
    let abl = ablate_dataset_size(&ds, &cfg, &[300, 400]).unwrap();
    let full = run_experiment(&ds, &cfg).unwrap();
    assert_eq!(abl.rows[1].report, full);
    assert_eq!(abl.rows.iter().map(|r| r.size).collect::<Vec<_>>(), [300, 400]);
    let mut curve = Vec::new();
    abl.write_curve_csv(&mut curve).unwrap();
    let curve = String::from_utf8(curve).unwrap();
    assert!(curve.starts_with("size,variant,score\n"));
    assert_eq!(curve.lines().count(), 1 + 2 * 3);
    assert!(abl.best_size("WT1").is_some());
    assert!(abl.best_size("nope").is_none());
}

#[test]
fn ablation_rejects_bad_sizes() {
    let ds = small_data(200);
    let cfg = small_config(vec![]);
    assert!(ablate_dataset_size(&ds, &cfg, &[]).is_err());
    assert!(ablate_dataset_size(&ds, &cfg, &[150, 100]).is_err());
    assert!(ablate_dataset_size(&ds, &cfg, &[100, 201]).is_err());
}
