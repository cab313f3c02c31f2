//! Synthetic datasets, OOD test sets, the four experiments and their outputs.

pub mod config;
pub mod dataset;
pub mod experiments;
pub mod ood;
pub mod output;

pub use config::ExperimentConfig;
pub use dataset::{generate_dataset, DatasetSpec, Provenance};
pub use experiments::{
    prepare, run_gap_experiment, run_icl_mitigation, run_ood_decay, run_small_data_comparison,
    IclReport, Prepared, SmallDataReport,
};
pub use ood::{make_ood_testset, OodTestSet};
