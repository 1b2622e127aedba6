//! Parameter storage and stateful layers.

pub mod gru;
pub mod layers;
pub mod params;

pub use gru::Gru;
pub use layers::{BatchNorm1d, Conv1d, Linear};
pub use params::{Gradients, Mode, ParamId, ParamKind, ParamStore, Session};
