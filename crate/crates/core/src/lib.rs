//! Kinematics of the ABB YuMi (IRB 14050) 7-DOF arm.
//!
//! The crate covers the product-of-exponentials forward kinematics, the
//! shoulder-elbow-wrist (SEW) arm angle used by the ABB controller, kinematic
//! and augmented Jacobians, singularity classification, and an inverse
//! kinematics solver that finds all solutions for a pose and arm angle by
//! searching over two joint angles.

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod ik;
pub mod jacobian;
pub mod model;
pub mod sew;
pub mod singularity;
pub mod spatial;

pub use error::{KinematicsError, Result};
