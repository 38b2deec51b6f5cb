//! Residual-MLP encoders trained on pretext tasks.
//!
//! Gradients are hand-derived for the fixed architecture rather than
//! produced by a general autodiff engine; the integration tests check every
//! loss against central finite differences.

pub mod checkpoint;
pub mod loss;
mod model;
mod network;
mod optim;
mod train;

pub use loss::{LossKind, LossSpec};
pub use model::{eval_chunks, EncoderModel, Objective};
pub use network::{
    build_network, parameter_count, ForwardCache, Mode, Network, BN_EPS, BN_MOMENTUM,
    DEFAULT_DROPOUT, EMBED_DIM,
};
pub use optim::Adam;
pub use train::{
    extract_embeddings, random_search, train_pretext, EpochRecord, SearchResult, SearchSpace,
    SearchTrial, TrainConfig, TrainedEncoder,
};
