//! Layers, the mini-ResNet builder and checkpoints.

pub mod checkpoint;
mod init;
mod layers;
mod network;
mod params;

pub use init::{he_normal, he_normal_fan};
pub use layers::{
    batchnorm, batchnorm_forward, cross_entropy, global_avg_pool, linear, softmax_rows, update_running, BatchStats,
    Mode, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use network::{build_network, BnUpdate, ForwardOutput, Network, NetworkSpec, Placement};
pub use params::{Bound, Param, ParamId, ParamKind, ParamStore};

#[cfg(test)]
mod tests;
