//! Feedforward network engine: dense layers, ReLU, softmax cross-entropy,
//! SGD, manual backpropagation and MAC accounting.

mod checkpoint;
mod loss;
mod matrix;
mod mlp;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC, VERSION};
pub use loss::softmax_xent;
pub use matrix::Matrix;
pub use mlp::{
    Activation, ActivationPlan, Backward, Dense, ForwardTrace, Gradients, LayerGrads, MacPass, Mlp, Pass,
    BACKWARD_MAC_FACTOR,
};
