//! Data construction and training procedures for domain adaptation.

pub mod construct;
pub mod joint;
pub mod train;

pub use construct::{
    authentic_triples, back_translate, copy_corpus, direction_columns, mix_semi_supervised, repair_corpus, round_trip,
    triple_columns, Built,
};
pub use joint::{
    fine_tune, joint_train, repair_side_for, stage_seed, train_dr_models, IterationRecord, JointData, JointOutcome,
    JointTrainConfig, ModelRegistry, Persist, Snapshot, DIRECTIONS,
};
pub use train::{corpus_loss, steps_per_epoch, train, TrainLog, TrainSchedule};
