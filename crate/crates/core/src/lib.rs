//! Cross-domain variational graph autoencoder for concept prerequisite
//! learning.
//!
//! A heterogeneous graph links source-domain concepts, target-domain concepts
//! and lecture resources. The encoder adds a message-passing term over
//! cross-domain concept neighbours, and a DistMult decoder trained on source
//! relations scores target pairs.

pub mod autodiff;
pub mod baseline;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod synthetic;
pub mod train;

pub use baseline::{predict_cls, train_cls, ClsConfig, LogisticModel};
pub use dataset::{Dataset, Domain, EmbeddingKey, EmbeddingTable, RelationSet};
pub use eval::{
    compute_metrics, make_split, run_protocol, run_seed, EvalSplit, Metrics, ModelKind, ProtocolConfig,
    SeedReport,
};
pub use graph::{build_graph, GraphConfig, HeteroGraph};
pub use linalg::{Matrix, SeededRng};
pub use model::{ModelParams, EncoderOptions};
pub use synthetic::{generate, PlantedGraph, PlantedSpec};
pub use train::{fit, TrainConfig, TrainedModel};

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Grad(#[from] autodiff::GradError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Baseline(#[from] baseline::BaselineError),
    #[error(transparent)]
    Synth(#[from] synthetic::SynthError),
}
