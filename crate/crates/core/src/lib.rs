//! Continuous-fiber path planning for stiffness of 2D laminate parts.

pub mod baselines;
pub mod extraction;
pub mod fem;
pub mod geometry;
pub mod material;
pub mod objective;
pub mod optim;
pub mod planner;
pub mod scenario;
pub mod sparse;
