//! Set-prediction training: matching, loss, staged optimization and
//! checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod matching;
pub mod trainer;

pub use checkpoint::{checkpoint_to_string, load_checkpoint, parse_checkpoint, save_checkpoint, transplant_group};
pub use loss::{set_loss, LossBreakdown, LossConfig, SetLoss, StageLoss};
pub use matching::{build_cost_matrix, hungarian_match, CostWeights, MatchResult};
pub use trainer::{
    aam_source_layers, aam_stats, collect_aam_tokens, evaluate_loss, scene_gradients, train_aam, train_aam_on_tokens,
    train_detector, train_propagation, train_refinement, AamStats, EpochRecord, Stage, TrainConfig, TrainLog,
};
