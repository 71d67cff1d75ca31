//! Mini-batch graph neural networks: dense linear algebra, seeded RNG,
//! per-batch kNN graph induction, tape-based reverse-mode differentiation,
//! MBGNN/Attn-MBGNN classifiers, a perturbation-attenuation verifier, a
//! corruption/black-box robustness bench, and GAN mode-collapse tooling
//! (MC-MBGNN discriminator head, minibatch discrimination, NDB metric).
//!
//! The crate is `no_std`-compatible (`alloc` required). All floating-point
//! transcendentals go through [`libm`] so results are bit-identical across
//! platforms and across the `std`/`no_std` builds. Everything is seeded and
//! deterministic: same seed, same inputs, same bytes out.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod gan;
pub mod graph;
pub mod math;
pub mod matrix;
pub mod model;
pub mod ndb;
pub mod optim;
pub mod rng;
pub mod robust;
pub mod stats;
pub mod tape;
pub mod train;

pub use graph::BatchGraph;
pub use matrix::{CoreError, DenseMatrix};
pub use rng::SeededRng;
