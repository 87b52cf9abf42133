//! Network construction from an [`ArchitectureConfig`].

mod blocks;
mod config;
mod network;

pub use blocks::{transition_block, BlockSettings, DenseBlock, PlainBlock, ResidualBlock};
pub use config::{
    AttentionConfig, ArchitectureConfig, Connectivity, Padding, PoolConfig, ARCH_CONFIG_VERSION, DEFAULT_DROPOUT,
    DEFAULT_KERNEL,
};
pub use network::{BlockKind, BlockPlan, ForwardOutput, ForwardPass, Network, NetworkLayers, NetworkPlan, Stage};
