//! Synthetic task, optimizer, training loop, evaluation and ablation grid.

pub mod ablation;
pub mod eval;
pub mod optim;
pub mod scene;
pub mod train;

pub use ablation::{median, run_ablation, run_cell_seed, summarize, AblationCell, CellResult, GridSpec, RunSummary};
pub use eval::{ap_metrics, detections, evaluate, BranchSel, Detection, EvalConfig, EvalResult};
pub use optim::{Adam, AdamConfig};
pub use scene::{gen_scene, sample_scene, SceneConfig, SyntheticScene};
pub use train::{
    branch_label, primary_o2o_loss, train, train_with_progress, DataConfig, ExperimentConfig, MatchSettings,
    MetricsLog, MetricsRow, StepReport, TrainConfig, TrainOutcome, Trainer,
};
