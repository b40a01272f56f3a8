//! Teacher pretraining, SAKE fine-tuning, and the linear probe that measures
//! how much original-domain knowledge survives fine-tuning.

mod probe;
mod trainer;

pub use probe::{evaluate_original_head, extract_features, linear_probe, ProbeConfig, ProbeReport};
pub use trainer::{
    finetune_sake, make_batch, pretrain_teacher, source_accuracy, EpochRecord, Stage, TrainConfig, TrainOutcome,
    TrainReport, PRETRAIN_MIN_ACCURACY,
};
