//! Experiment configuration, checkpoints, end-to-end runs and reports.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod report;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_dr, load_nmt, save_checkpoint, RawCheckpoint, FORMAT_VERSION};
pub use config::{ExperimentConfig, Method};
pub use experiment::{generate_data, pretrain, pretrain_cached, run_experiment, run_seed, score, write_data, ExperimentData, SeedResult};
pub use report::{emit_report, load_report, median, Cell, Curve, LineageEntry, PremiseCheck, RepairAnalysis, ReportHeader, RunReport, DIRECTION_NAMES};
