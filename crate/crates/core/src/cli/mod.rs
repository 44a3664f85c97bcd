//! Run configuration and the `synth`, `train`, `translate` and `eval` commands.

mod commands;
mod config;

pub use commands::{
    cmd_eval, cmd_synth, cmd_train, cmd_translate, evaluate_loss, init_training, load_denoiser, train, translate_dataset,
    TrainOutcome,
};
pub use config::{RunConfig, SceneKind, PROFILE_ENV};
