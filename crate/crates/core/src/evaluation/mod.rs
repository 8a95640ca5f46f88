//! Scoring and experiment orchestration.

mod experiment;
mod metrics;

pub use experiment::{
    ablate_dataset_size, direct_score, featurize_dataset, raw_encodings, run_experiment,
    run_experiment_with_encodings, table_encodings, train_aux_learners, train_head, AblationReport, AblationRow,
    ExperimentConfig, HeadOutcome, Report, RowScore,
};
pub use metrics::macro_f1;
