//! Config-driven benchmark grid over datasets, models, augmentation and
//! seeds, with markdown and CSV result tables.

mod cli;
mod config;
mod run;
mod table;

pub use cli::cli_main;
pub use config::{
    AugmentRates, Augmentation, DatasetSource, ExperimentConfig, ModelEntry, OutputConfig, OutputFormat, SEED_ENV,
};
pub use run::{run_grid, DumpDirs, ResultRow};
pub use table::{emit_table, parse_csv, CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Graph(#[from] crate::graphkit::GraphError),
    #[error(transparent)]
    Gnn(#[from] crate::gnn::GnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed table: {0}")]
    Table(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
