//! Decoder-only transformer, differentiation tape, loss and optimizer.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mat;
pub mod model;
pub mod optim;
pub mod tape;

pub use attention::attention;
pub use checkpoint::Checkpoint;
pub use loss::{apply_rcm_mask, cross_entropy, lm_loss, restricted_softmax, softmax, Disallowed, LmExample, LmLoss};
pub use mat::Mat;
pub use model::{HeadKind, ModelConfig, TransformerModel};
pub use optim::{AdamWConfig, OptimizerState};
pub use tape::{Tape, Var};
