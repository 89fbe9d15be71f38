//! Perception, planning and mission logic for an autonomous trolley-collecting robot.
//!
//! The robot finds a trolley with a camera (keypoints and PnP), closes in
//! with a LiDAR (backplane plane fit), and drives with a receding-horizon
//! planner whose constraints are discrete-time control barrier functions.

pub mod calibration;
pub mod geometry;
pub mod plane;
pub mod planner;
pub mod mission;
pub mod pnp;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/perception.md")]
    mod perception {}
    #[doc = include_str!("../../../book/src/planner.md")]
    mod planner {}
    #[doc = include_str!("../../../book/src/mission.md")]
    mod mission {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
}
