//! The four-step training recipe.

pub mod loss;
pub mod sampler;
pub mod schedule;
pub mod steps;

pub use loss::{combined_loss, combined_loss_graph, LossReport, DEFAULT_LAMBDA};
pub use sampler::{batch_feed, sample_batch, BalancedSampler};
pub use schedule::{lr_at, wd_at, ScheduleSpec};
pub use steps::{
    prepare_examples, verify_state_machine, ComponentDigests, ComponentState, LogRecord, LossComposition, Pipeline,
    StepOutcome, StepPlan, TrainOptions, TrainingExample,
};
