//! Variational generalized Nash equilibrium (v-GNE) seeking for aggregative
//! games with affine coupling constraints.
//!
//! The crate is `no_std` (it needs `alloc`).  It contains the game model,
//! the exact projections, time-varying gossip networks, the
//! preconditioned forward-backward operator layer, three solvers
//! (semi-decentralized, full-information distributed, and
//! partial-information distributed with dynamic tracking), runtime
//! convergence diagnostics, and a reference solver.
//!
//! Stacked vectors use agent-major order: `x = (x_1, ..., x_N)` with each
//! `x_i` of length `n`, dual copies `λ = (λ_1, ..., λ_N)` with each `λ_i`
//! of length `m`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod game_model;
pub mod linalg;
pub mod network;
pub mod operators;
pub mod oracle;
pub mod projection;
pub mod rng;
#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
