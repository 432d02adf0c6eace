//! Multiscale finite element methods for advection-diffusion problems with oscillatory
//! diffusion: offline local problems, online coarse solves, bubble condensation and
//! an effective-coefficient pathway for the Petrov-Galerkin Crouzeix-Raviart variants.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod metrics;
pub mod offline;
pub mod online;
pub mod problem;
pub mod runner;

pub use error::{MsfemError, Result};
