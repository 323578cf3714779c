//! The adaptation pipeline: configuration, phases, and experiments.

pub mod config;
pub mod experiment;
pub mod phases;

pub use config::{DataConfig, EvalConfig, PipelineConfig, RobustConfig, TrainingConfig};
pub use experiment::{run_experiment, run_seed, ExperimentReport, MeanRow, ReportRow, SeedRun, Summary, Variant};
pub use phases::{
    derive_seed, evaluate, mine, phase1_mine, phase2_rescore, phase3_robust_retrain, train_oracle, Ablation,
    Evaluation, PhaseReport, PseudoLabel, PseudoLabelSet, RetrainOptions, SeedData,
};
