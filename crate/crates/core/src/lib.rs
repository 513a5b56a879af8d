//! Core library for GARCIA, a long-tail service search framework: a bipartite
//! query–service graph with interaction and correlation edges, separate
//! attention-based GNN encoders for head (high-exposure) and tail queries, a
//! bottom-up intention-tree encoder, multi-granularity contrastive
//! pre-training, click-through fine-tuning, sliced ranking metrics, and a
//! seeded synthetic scenario generator for desk-scale experiments.

pub mod check;
pub mod contrastive;
pub mod encoder;
pub mod forest;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod params;
pub mod seed;
pub mod synthgen;
pub mod tape;
pub mod tensor;
pub mod training;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Errors surfaced by graph building, encoding, training, and file IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("graph: {0}")]
    Graph(String),
    #[error("intention forest: {0}")]
    Forest(String),
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training: {0}")]
    Train(String),
    #[error("metrics: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }
}
