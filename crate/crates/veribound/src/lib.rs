//! veribound: certified bounds, satisfiability checking, and global
//! optimization for functions expressed as computation graphs over box
//! input domains.

pub mod bab;
pub mod boundprop;
pub mod control;
pub mod falsify;
pub mod fixtures;
pub mod graph;
pub mod interval;
pub mod jacobian;
pub mod optimize;
pub mod relax;
pub mod spec;

pub use graph::{Graph, GraphBuilder, GraphError, NodeId, OpKind};
pub use interval::{BoxDomain, Interval};

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
