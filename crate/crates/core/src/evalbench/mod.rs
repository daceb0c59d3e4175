//! Small-data evaluation: metrics, the three-split benchmark protocol,
//! deterministic report files and analytic oracles.

mod metrics;
mod oracle;
mod protocol;
mod report;

use thiserror::Error;

use crate::training::TrainError;

pub use metrics::{kendall_tau_b, mae, r2, BoxStats};
pub use oracle::{bayes_denoiser, train_toy_denoiser, ToyDenoiserRun};
pub use protocol::{
    cell_seed, run_benchmark, split_indices, CellRanking, CellResult, EvalReport,
    FinetuneFactory, Fitted, MeanFactory, ModelFactory, OracleFactory, Protocol, RankingSpec,
};
pub use report::{emit_report, fmt_g6, load_report, win_table, WinRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("truth values have zero variance")]
    ZeroVariance,
    #[error("all values tied; tau-b undefined")]
    AllTied,
    #[error("assay '{0}' has fewer than 4 molecules")]
    TooFewMolecules(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("assay '{assay}', split {split}: {source}")]
    Cell {
        assay: String,
        split: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("ranking labels: {0}")]
    Rank(#[from] crate::ranklab::RankError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad report file: {0}")]
    Format(String),
}
