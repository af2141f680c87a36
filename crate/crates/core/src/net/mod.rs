//! Small fully connected networks with exactly the derivatives the trainer
//! needs: reverse-mode parameter/input gradients and forward-mode JVPs.

mod adam;
mod checkpoint;
mod dual;
mod mlp;
mod policy;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, SCHEMA_VERSION};
pub use dual::{gelu, gelu_prime, Dual};
pub use mlp::{Activation, Dense, ForwardCache, Gradient, Mlp};
pub use policy::MeanFlowPolicy;
