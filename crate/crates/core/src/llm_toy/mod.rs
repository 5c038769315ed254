//! Multiple-choice prompting of a small causal decoder fed with projected
//! audio, visual and text pseudo-tokens, adapted in two stages: projectors
//! and head over a frozen decoder, then LoRA adapters on the attention
//! query and value weights.

mod lora;
mod model;
mod prompt;
mod train;

pub use lora::{lora_wrap, LoraLayer, LORA_INIT_STD};
pub use model::{
    causal_mask, LlmToyConfig, ToyLlm, CONFIG_FILE, GROUP_BACKBONE, GROUP_HEAD, GROUP_LORA, GROUP_PROJECTOR, PARAMS_DIR,
};
pub use prompt::{build_prompt, decode_answer, PromptTemplate, Vocab};
pub use train::{
    evaluate, fit, majority_class, stage1_train, stage2_train, train_groups, write_jsonl, LlmEvaluation, PromptRecord,
    StageReport, Stages,
};
