//! Equivariant layers, networks, losses and optimization.

pub mod arch;
mod adam;
mod checkpoint;
mod gconv;
mod loss;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TrainedNetwork, CHECKPOINT_MAGIC};
pub use gconv::{expand_kernel, expand_kernel_backward, GConvLayer, GConvSpec, Pairing};
pub use loss::{softmax, softmax_ce};
pub use network::{ForwardCache, Gradients, Layer, Network, NetworkSpec};
