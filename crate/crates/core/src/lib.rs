//! Adaptive sparse-training library: tape autodiff over dense row-major
//! tensors, N:M semi-structured sparsity with straight-through masking,
//! annealed sparse-regularized optimizers, distillation losses, low-rank
//! boost adapters, a byte-level decoder-only transformer, and a packed
//! sparse checkpoint codec.

pub mod bits;
pub mod checkpoint;
pub mod compress;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod graph;
pub mod model;
pub mod optim;
pub mod sparsity;
pub mod trainer;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod slorb;
pub mod simd;
