//! Intrinsic gradient compression for federated learning.
//!
//! Gradients are projected into low-dimensional random subspaces generated
//! from seeds, so only `d`-dimensional vectors cross the network while the
//! `D`-dimensional model is reconstructed exactly on every node.
//!
//! * [`projection`]: Fastfood matrices and dense orthonormal subspaces.
//! * [`compressors`]: static, K-subspace and time-varying protocols plus the
//!   Top-K and FedAvg baselines.
//! * [`federation`]: round-based simulation with exact bandwidth accounting.
//! * [`models`]: gradient oracles and datasets.
//! * [`experiments`]: probes of the convergence behaviour on convex problems.
//! * [`config`], [`report`], [`runner`]: run configuration, file formats and
//!   the operations exposed by the service and CLI.

pub mod api;
pub mod compressors;
pub mod config;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod models;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod projection;
pub mod report;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
