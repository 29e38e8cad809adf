//! Dense vectors with reverse-mode differentiation, and the recurrent and
//! attention building blocks used by both models.

pub mod attention;
pub mod checkpoint;
pub mod graph;
pub mod lstm;
pub mod optim;
pub mod params;

pub use attention::Attention;
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use lstm::{BiLstm, Lstm, LstmState, StackLstm, StackLstmState};
pub use optim::Adam;
pub use params::{Gradients, Init, Param, ParamId, ParamStore};
