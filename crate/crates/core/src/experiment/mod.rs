//! Training variants, the evaluation protocol and the results table.

mod batch;
mod config;
mod protocol;
mod train;

pub use batch::{assemble_batch, BatchPlan, DomainSampler};
pub use config::{ExperimentConfig, MethodKind, MethodSpec, Selection};
pub use protocol::{
    distinct_source_sets, results_to_csv, run_protocol, summarize, write_results, ws_noise_sweep, ProtocolOptions, ResultRow,
    Summary, RESULTS_HEADER,
};
pub use train::{
    choose_sources, evaluate, load_config_dataset, prepare_trial, run_trial, train, Batch, StepOutput, Trainer, TrialData,
    TrialResult,
};
