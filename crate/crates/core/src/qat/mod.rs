//! Quantization-aware training of ternary linear layers.

pub mod layer;
pub mod ops;
pub mod optim;
mod scheme;
pub mod train;

pub use layer::{LayerGrads, QuantLinearLayer, DEFAULT_EPSILON};
pub use ops::{
    backward_learnable, backward_minima, backward_ste, backward_tequila, backward_tequila_no_mixed,
    forward_dlt, forward_lsq, forward_minima, forward_seq, forward_ternary, forward_tequila,
    ForwardCache, LearnableGrads,
};
pub use optim::{Adam, AdamConfig, OptimizerState, DEFAULT_LEARNING_RATE};
pub use scheme::Scheme;
pub use train::{train, train_toy, QuantMlp, Task, TrainConfig, TrainReport};
