//! Run configuration and the three-stage training schedule:
//! observation pretraining → concept fine-tuning → decoder training, then
//! evaluation and visualisation.

mod config;
mod train;

pub use config::{encoder_fingerprint, AblationRow, ConceptMode, ModelConfig, RunConfig, Stage};
pub use train::{
    build_artifacts, concept_rank_stats, evaluate, evaluate_encoder, finetune_concepts, frozen_features,
    init_decoder_params, init_encoder_params, pretrain_encoder, run_ablation, train_decoder, visualize,
    ConceptEpoch, DecoderEpoch, EncoderEpoch, EncoderEval, Evaluation, FrozenFeatures, Prepared, RankStats,
    StageError, TrainState, TrainedDecoder, TrainedStage, ViewHeatmap, Visualization,
};
