//! Energy-aware data forwarding for industrial IoT networks.
//!
//! A central controller plans the initial forwarding paths and a distributed
//! protocol repairs them locally when link costs rise or nodes die.

pub mod cli;
pub mod engine;
pub mod lifetime;
pub mod netmodel;
pub mod planner;
pub mod protocol;
pub mod rng;
