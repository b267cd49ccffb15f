//! Recurrent building blocks: GRU stacks, deep-set blocks, graph-convolution blocks.

mod deepset;
mod graphconv;
mod gru;

pub use deepset::{DsBlock, DsOutput};
pub use graphconv::{GcnBlock, GcnLayer};
pub use gru::{GruBlock, GruCell, GruStack, Linear};
