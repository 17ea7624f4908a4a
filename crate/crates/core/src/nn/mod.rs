//! Dense feedforward networks with manual backpropagation, Adam, and a
//! portable binary checkpoint format.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_load, checkpoint_load_expecting, checkpoint_save};
pub use mlp::{argmax, Activation, Dense, Gradients, Mlp, Scratch, Trace};
