//! Adaptive-horizon robust model predictive control for linear systems with
//! polytopic model uncertainty and bounded additive disturbances.

pub mod baseline;
pub mod controller;
pub mod geometry;
pub mod prediction;
pub mod problem;
pub mod qp;
pub mod simulator;
pub mod svg;
pub mod system;
