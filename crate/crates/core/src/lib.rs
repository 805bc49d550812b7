//! Physics core and pose-aggregation pipeline for visual-physical
//! hand-object pose estimation.
//!
//! The crate covers friction-cone contact forces, static-equilibrium
//! residuals, a two-phase pseudo-force solver, probability-flow-ODE
//! candidate sampling, heatmap-guided hierarchical aggregation,
//! physics-based re-ranking, and the pose/physics evaluation metrics,
//! exercised on deterministic synthetic grasp scenarios.

pub mod aggregate;
pub mod error;
pub mod geom;
pub mod force;
pub mod hand;
pub mod mesh;
pub mod heatmap;
pub mod metrics;
pub mod physics;
pub mod sample;
pub mod scenario;
pub mod solve;

pub use error::{Error, Result};
