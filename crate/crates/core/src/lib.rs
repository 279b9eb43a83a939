//! Query processing for databases of uncertain moving-object trajectories.
//!
//! Every object moves on a finite state space according to an a-priori Markov
//! chain and is pinned down by a handful of certain observations. This crate
//! answers probabilistic nearest-neighbor queries over such objects:
//!
//! * [`adaptation`] conditions an object's chain on all of its observations
//!   (forward-backward), yielding an a-posteriori chain that can be sampled
//!   without rejection.
//! * [`exact`] computes P∀NN probabilities exactly (hit/drop matrix
//!   propagation for pairs, joint conditioning for whole databases) and mines
//!   maximal PCNN timestamp sets level-wise.
//! * [`sampling`] estimates P∀NN, P∃NN and PCNN probabilities by Monte-Carlo,
//!   including the rejection and snapshot baselines.
//! * [`index`] bounds every object's reachable states between observations
//!   and prunes candidates and influence objects with min/max distances.
//! * [`datagen`] builds synthetic workloads on random geometric graphs.
//! * [`oracle`] is a brute-force possible-worlds reference for small inputs.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line, timing and parallel orchestration live in the `ust` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adaptation;
pub mod datagen;
mod error;
pub mod exact;
pub mod index;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampling;
mod sparse;

pub use error::{Error, Result};
pub use sparse::SparseVec;
