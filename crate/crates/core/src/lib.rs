//! Headless robot-demonstration collection.
//!
//! The operator guides a simulated arm through waypoints, inspects and
//! reverts the path, audits a replay for collisions, and exports RGB-D
//! frames plus keyframes for policy training.

pub mod geometry;
pub mod kinematics;
pub mod scene;
pub mod session;
pub mod record;
pub mod gateway;
