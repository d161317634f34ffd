//! Frame-wise recurrent predictors, the Stage-1 detector and training.

mod checkpoint;
mod network;
mod stage1;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use network::{ConvConfig, ForwardCache, HeadKind, ModelConfig, ParamEntry, ParamLayout, SeqModel};
pub use stage1::{reweight, stage1_detect, Stage1Output};
pub use train::{
    evaluate, sample_gradient, train, Adam, EpochRecord, Objective, Sample, Target, TrainConfig,
    TrainOutcome,
};
