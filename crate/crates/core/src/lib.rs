//! Planar grasp-acquisition lab.

pub mod math;
pub mod approximator;
pub mod env;
pub mod experiments;
pub mod hand;
pub mod physics2d;
pub mod scene;
pub mod trpo;
