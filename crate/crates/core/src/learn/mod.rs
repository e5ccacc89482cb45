//! Causal regularisers in embedding space and a desk-scale forecaster to
//! exercise them.

pub mod features;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use features::{encode, Encoded, Frame, Normalizer};
pub use loss::{
    combined_loss, contrastive_loss, contrastive_loss_grad, embedding_distance, embedding_distance_grad, ranking_loss, ranking_loss_grad,
    LossConfig,
};
pub use model::{Dims, ToyModel};
pub use train::{
    batch_loss, draw_scene, embedding_alignment, evaluate_predictor, log_csv, predict_all, predict_scene, prepare, prepare_scene,
    scene_loss, spearman, train_toy, CausalDraw, EmbeddingAlignment, EpochLog, LossTerms, Mode, Predictor, SceneDraw, SceneSample,
    TrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("embedding has (near) zero norm")]
    ZeroNormEmbedding,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss diverged in epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{0}")]
    Io(String),
}
