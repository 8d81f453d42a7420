//! Prompt-based next-POI model: prompt construction, the attention surrogate
//! with coordinate and POI slots, training and checkpoints.

pub mod checkpoint;
pub mod model;
pub mod prompt;
pub mod train;

pub use checkpoint::{load_model, save_model};
pub use model::{rank, Ablation, Surrogate};
pub use prompt::{build_prompt, PromptSequence, TokenVocab};
pub use train::{fit, train, EpochStats, TrainOutcome, TrainedModel};
