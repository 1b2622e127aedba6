//! Finite difference network: intonation attention, FDN-Light / FDN-Heavy
//! blocks and the full speaker embedding network.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod count;
pub mod network;
pub mod seo;

pub use block::{BlockAttention, FdnBlock};
pub use config::{ModelConfig, Variant};
pub use count::count_parameters;
pub use network::{FdnModel, ForwardOutput};
pub use seo::{hierarchical_reweight, split_feature, SeoModule, SplitSpec};
