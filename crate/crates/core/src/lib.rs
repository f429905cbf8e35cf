//! Orchestration core for closed-loop autonomous experimentation.
//!
//! External modules (devices, analyzers, planners) dial the core over the
//! framed protocol in [`wire`], are tracked by the [`registry`], and are
//! driven by the [`campaign`] engine, which plans with [`planner`] and
//! records every state change in the [`journal`].

pub mod campaign;
pub mod clock;
pub mod journal;
pub mod planner;
pub mod registry;
pub mod service;
pub mod sim;
pub mod transport;
pub mod wire;
