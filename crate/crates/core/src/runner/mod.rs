//! Config-driven experiments: zero-shot and few-shot runs, template by
//! verbalizer grids with ensemble rows and columns, a score cache and
//! markdown reports.

mod cache;
mod config;
mod pipeline;
mod report;

pub use cache::{candidate_digest, ScoreCache};
pub use config::{EmbeddingSource, EvalSplit, ExperimentConfig, LabelWords, SamplingConfig, SplitConfig, DEFAULT_SEED};
pub use pipeline::{
    build_backend, check_leakage, evaluate_rows, find_leak, fit_members, grid_results, grid_scores, leakage_violations,
    load_predictions, run_chat, run_few_shot, run_grid, run_zero_shot, run_zero_shot_with, select_training,
    training_pairs, Experiment, FewShotModels, MemberScores, PredictionRow, Provenance, RunOutcome, RunStatus,
    Selection, DETAILED_TEMPLATE_ID,
};
pub use report::{render_grid_report, GridCell, GridReport, GridResults, ENSEMBLE_ID};
