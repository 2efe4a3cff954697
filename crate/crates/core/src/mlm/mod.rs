//! Toy transformer-encoder masked LM with full fine-tuning and three PEFT
//! schemes (bottleneck adapters, attention prefixes, prompt embeddings).

mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod ops;
mod params;
mod train;

pub use checkpoint::{checkpoint_mode, from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
pub use config::{MlmConfig, PeftConfig, TrainConfig, TuningMode};
pub use gradcheck::{analytic_gradient, grad_check, relative_error, FD_STEP};
pub use model::{init_model, MlmExample, PeftState, ShapeTrace, ToyMlm};
pub use params::{
    group_matches, is_peft_group, Adapter, Layer, LayerAdapters, Mat, Norm, Params, Prefix, Tensor, TensorMut,
};
pub use train::{encode_record, mask_sequence, train, LossTrace};
