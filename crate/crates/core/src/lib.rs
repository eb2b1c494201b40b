//! Sparse wide networks at a fixed weight budget: allocation of sparsity
//! across layers, static masks, MLP training on MNIST, Gaussian-process
//! kernel distances, and sweep orchestration.

pub mod allocator;
pub mod data;
pub mod harness;
pub mod kernel;
pub mod mask;
pub mod model;
pub mod rng;
pub mod stats;
pub mod train;
