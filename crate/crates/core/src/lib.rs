// SPDX-License-Identifier: Apache-2.0

//! Radar-assisted dynamic scene geometry.
//!
//! The crate covers the geometric and optimisation core of reconstructing
//! dynamic driving scenes with a camera and a 4D radar:
//!
//! * [`ego_motion`]: RANSAC ego-velocity from radial velocities and
//!   static/dynamic labelling of radar returns
//! * [`segmentation`]: radar-anchored ROIs and max-compositing of per-ROI
//!   probability patches into a dynamic mask
//! * [`scale`]: metric scale recovery for relative depth maps from static
//!   radar returns
//! * [`flow_lift`]: 2-d optical flow + depth to 3-d scene flow, with radar
//!   radial velocity association
//! * [`deformation`]: an invertible time-conditioned coupling field trained on
//!   scene-flow and radial-displacement losses
//! * [`simulator`]: synthetic scenes with exact ground truth for all of the
//!   above
//!
//! File formats live in [`io`]; [`pipeline`] chains the stages and [`cli`]
//! backs the `radarflow` binary. Runnable walkthroughs for each stage are in
//! the crate's `examples/` directory.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod deformation;
pub mod ego_motion;
pub mod flow_lift;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod pipeline;
pub mod radar;
pub mod raster;
pub mod scale;
pub mod seed;
pub mod segmentation;
pub mod simulator;

pub use geometry::{CameraModel, Mat3, RigidTransform, Vec3};
pub use radar::{RadarFrame, RadarPoint};
pub use raster::{DepthImage, DynamicMask, FlowImage, ScaleState};
