pub mod loss;
pub mod metrics;
pub mod optim;

pub use loss::weighted_ce_loss;
pub use metrics::{compute_metrics, Confusion, EvalReport};
pub use optim::RmsProp;
pub mod trainer;

pub use trainer::{
    argmax_labels, epochs_to_csv, evaluate, predict_labels, rising_loss_epochs, train_step, Control, EpochLog,
    TrainConfig, TrainOutcome, Trainer,
};
pub mod ablation;

pub use ablation::{ablate, run_one, AblationData, AblationReport, RateSweep, RunMetrics, SweepRow, SweepTarget, VariantRow};
