//! Evolutionary search over auxiliary losses for reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsl`]: auxiliary-loss genomes and their text form
//! - [`autodiff`]: a small reverse-mode AD tape over dense matrices
//! - [`operators`]: the ten loss operators comparing predictions to targets
//! - [`envs`]: point-mass control tasks and the partial-observability wrapper
//! - [`rl`]: the SAC-style inner loop with an auxiliary head
//! - [`evolution`]: population search, mutation and selection
//! - [`analysis`]: pattern statistics over search logs
//! - [`config`]: flat run configuration shared by the command line tool
//! - [`seed`]: deterministic seed derivation for every random stream

pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod dsl;
pub mod envs;
pub mod evolution;
pub mod operators;
pub mod rl;
pub mod seed;
