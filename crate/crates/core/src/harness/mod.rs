//! Experiment orchestration: the end-to-end pipeline from corpus to trained
//! agents, learning-curve comparison, embedding-space projections and the
//! novel-command generalization report.

mod compare;
mod config;
mod experiment;
mod plot;
mod projection;

pub use compare::{aggregate_seeds, compare_runs, load_run, moving_average, Comparison, CurvePoint, RunCurve, RunData};
pub use config::{ExperimentConfig, Variant};
pub use experiment::{
    final_window_stats, prepare_mem, run_experiment, sha256_hex, sidecar, train_mem_artifacts, write_curve,
    write_records, EmbeddingArtifacts, MemArtifacts, Provenance, RunSummary, CURVE_COLUMNS, FAILURE_MARKER,
};
pub use plot::{line_chart, scatter_chart, LineSeries, ScatterPoint};
pub use projection::{
    centroids, generalization_eval, goal_state_embeddings, nearest_centroid, pca, project_embeddings, silhouette, tsne,
    CommandPlacement, GeneralizationReport, GibberishCheck, Pca, ProjectionMethod, ProjectionReport, GIBBERISH,
    TSNE_MAX_POINTS, TSNE_PERPLEXITY,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::AgentError;
use crate::lexicon::LexiconError;
use crate::mem::MemError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed run directory {path}: {reason}")]
    Run { path: PathBuf, reason: String },
    #[error("evaluation cadence differs: {0}")]
    Cadence(String),
    #[error("exact t-SNE supports at most {max} points, got {got}")]
    TooManyPoints { got: usize, max: usize },
    #[error("projection needs {0}")]
    Projection(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
