//! Core algorithms for a desk-scale synthetic RLHF laboratory.
//!
//! The crate provides everything needed to reproduce reward-model
//! overoptimization experiments on a laptop: a tiny feedforward network
//! kernel with exact gradients ([`nn`]), a synthetic token world with a
//! frozen gold reward model and a trainable policy ([`world`]), preference
//! generation with controlled label noise ([`pref`]), proxy reward-model and
//! ensemble training ([`rm`]), conservative ensemble objectives
//! ([`combine`]), best-of-n evaluation ([`bon`]) and a clipped
//! policy-gradient optimizer ([`ppo`]).
//!
//! Everything is deterministic given seeds and works without `std`; file
//! formats, CLI and plotting live in the companion `rmlab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bon;
pub mod combine;
pub mod nn;
pub mod ppo;
pub mod pref;
pub mod rm;
pub mod seed;
pub mod world;
