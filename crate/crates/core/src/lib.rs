//! Perception-aware frontier exploration.
//!
//! The crate is organised bottom-up:
//!
//! - [`bezier`] and [`qp`]: Bernstein/Bézier algebra and a dense convex QP solver.
//! - [`world`]: tri-state voxel map, feature map, DDA ray casting and the camera model.
//! - [`frontier`]: frontier clustering, viewpoint sampling and perception-weighted scoring.
//! - [`traj_position`]: grid path search, box corridors and minimum-snap position trajectories.
//! - [`traj_yaw`]: covisibility yaw waypoints and the continuous yaw optimisation.
//! - [`sim`]: procedural worlds, tracker and drift model, and the deterministic episode loop.
//!
//! Everything is deterministic for a fixed configuration and seed.

pub mod bezier;
pub mod error;
pub mod frontier;
pub mod qp;
pub mod sim;
pub mod traj_position;
pub mod traj_yaw;
pub mod world;

pub use error::{Error, Result};

/// 3D vector type used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = angle % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Lift `angle` onto the branch closest to `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    reference + wrap_angle(angle - reference)
}
