//! Numeric foundation: tensors, reverse-mode autodiff, initialization,
//! optimization, gradient checking, and checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, GraphParams, NodeId};
pub use init::{init_glorot, init_orthonormal};
pub use optim::{adam_step, clip_global_norm, lr_schedule, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
