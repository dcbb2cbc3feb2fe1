// SPDX-License-Identifier: Apache-2.0

//! Lifting 2-d optical flow to 3-d scene-flow correspondences, and attaching
//! radar radial velocities to them.
//!
//! Each sample stores its endpoints in the ego frame of their own timestamp
//! plus the transform `T_j_to_i` that maps frame-`j` ego coordinates into
//! frame-`i` ego coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, RigidTransform, Vec3};
use crate::kdtree::KdTree;
use crate::radar::RadarFrame;
use crate::raster::{DepthImage, DynamicMask, FlowImage};

/// Samples farther than this from every dynamic radar return get no radial
/// velocity, metres.
pub const DEFAULT_MAX_ASSOCIATION_DISTANCE: f64 = 3.0;

/// Default plausibility gate for lifted samples, m/s.
pub const DEFAULT_MAX_SPEED: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("raster dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("frame has no dynamic radar points")]
    NoDynamicRadarPoints,
    #[error("{labels} labels for a frame of {points} points")]
    LabelMismatch { labels: usize, points: usize },
    #[error("target time {t_j} is not after source time {t_i}")]
    NonIncreasingTime { t_i: f64, t_j: f64 },
}

/// One dynamic 3-d correspondence between times `t_i` and `t_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFlowSample {
    /// Frame-`t_i` ego coordinates, metres.
    pub x_ti: Vec3,
    /// Frame-`t_j` ego coordinates, metres.
    pub x_tj: Vec3,
    pub t_i: f64,
    pub t_j: f64,
    /// Radar centre in frame-`t_i` ego coordinates.
    pub radar_origin: Vec3,
    pub radial_velocity: Option<f64>,
    /// Maps frame-`t_j` ego coordinates to frame-`t_i` ego coordinates.
    pub t_j_to_i: RigidTransform,
    /// Source pixel `(col, row)` in image `i`.
    pub source_pixel: [u32; 2],
}

impl SceneFlowSample {
    pub fn dt(&self) -> f64 {
        self.t_j - self.t_i
    }

    /// `T_j_to_i · x_tj − x_ti`: the flow vector in frame-`t_i` coordinates.
    pub fn flow_in_source_frame(&self) -> Vec3 {
        self.t_j_to_i.apply(&self.x_tj) - self.x_ti
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    pub stride: u32,
    pub max_association_distance: f64,
    /// Samples implying a faster world-frame motion are dropped, m/s.
    pub max_speed: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            max_association_distance: DEFAULT_MAX_ASSOCIATION_DISTANCE,
            max_speed: DEFAULT_MAX_SPEED,
        }
    }
}

/// Keeps samples whose flow vector `T_j_to_i · x_tj − x_ti` implies at most
/// `max_speed`. Flow that crosses an occlusion boundary lands on another
/// surface and shows up as an implausibly long displacement.
pub fn drop_implausible(samples: Vec<SceneFlowSample>, max_speed: f64) -> Vec<SceneFlowSample> {
    samples
        .into_iter()
        .filter(|s| s.flow_in_source_frame().norm() <= max_speed * s.dt())
        .collect()
}

/// Depth at a subpixel location from the four surrounding pixels. All taps
/// must be valid. Inverse depth is interpolated, which is exact on planar
/// surfaces under perspective projection.
pub fn interpolate_depth(depth: &DepthImage, u: f64, v: f64) -> Option<f64> {
    if !(u >= 0.0 && v >= 0.0) {
        return None;
    }
    let c0 = u.floor() as i64;
    let r0 = v.floor() as i64;
    let fu = u - c0 as f64;
    let fv = v - r0 as f64;
    // an exact integer coordinate on the last row/column needs no second tap
    let c1 = if fu == 0.0 { c0 } else { c0 + 1 };
    let r1 = if fv == 0.0 { r0 } else { r0 + 1 };
    let d00 = depth.valid_at(c0, r0)?;
    let d10 = depth.valid_at(c1, r0)?;
    let d01 = depth.valid_at(c0, r1)?;
    let d11 = depth.valid_at(c1, r1)?;
    let inv = (1.0 - fu) * (1.0 - fv) / d00
        + fu * (1.0 - fv) / d10
        + (1.0 - fu) * fv / d01
        + fu * fv / d11;
    Some(1.0 / inv)
}

fn same_dims(name: &str, w: u32, h: u32, cam: &CameraModel) -> Result<(), LiftError> {
    if w != cam.width || h != cam.height {
        return Err(LiftError::DimensionMismatch(format!(
            "{name} is {w}x{h}, camera is {}x{}",
            cam.width, cam.height
        )));
    }
    Ok(())
}

/// Scene-flow samples for the dynamic pixels of frame `i`.
///
/// `pose_i` and `pose_j` are `world_from_ego`. Samples whose flowed target
/// leaves the image or lands on invalid depth are dropped. Output is
/// row-major by source pixel.
#[allow(clippy::too_many_arguments)]
pub fn lift_scene_flow(
    flow: &FlowImage,
    depth_i: &DepthImage,
    depth_j: &DepthImage,
    mask_i: &DynamicMask,
    cam: &CameraModel,
    pose_i: &RigidTransform,
    pose_j: &RigidTransform,
    t_i: f64,
    t_j: f64,
    stride: u32,
) -> Result<Vec<SceneFlowSample>, LiftError> {
    same_dims("flow", flow.width(), flow.height(), cam)?;
    same_dims("depth_i", depth_i.width(), depth_i.height(), cam)?;
    same_dims("depth_j", depth_j.width(), depth_j.height(), cam)?;
    same_dims("mask_i", mask_i.width(), mask_i.height(), cam)?;
    if !(t_j > t_i) {
        return Err(LiftError::NonIncreasingTime { t_i, t_j });
    }
    let ego_from_cam = cam.ego_from_cam();
    let t_j_to_i = pose_i.inverse().compose(pose_j);
    let stride = stride.max(1) as usize;
    let mut out = Vec::new();
    for row in (0..cam.height).step_by(stride) {
        for col in (0..cam.width).step_by(stride) {
            if !mask_i.get(col, row) {
                continue;
            }
            let d_i = depth_i.get(col, row);
            if !(d_i > 0.0) {
                continue;
            }
            let [du, dv] = flow.get(col, row);
            let (u2, v2) = (col as f64 + du, row as f64 + dv);
            if !cam.contains(u2, v2) {
                continue;
            }
            let Some(d_j) = interpolate_depth(depth_j, u2, v2) else {
                continue;
            };
            let (Ok(src), Ok(dst)) = (
                cam.back_project(col as f64, row as f64, d_i),
                cam.back_project(u2, v2, d_j),
            ) else {
                continue;
            };
            out.push(SceneFlowSample {
                x_ti: ego_from_cam.apply(&src),
                x_tj: ego_from_cam.apply(&dst),
                t_i,
                t_j,
                radar_origin: Vec3::zeros(),
                radial_velocity: None,
                t_j_to_i,
                source_pixel: [col, row],
            });
        }
    }
    Ok(out)
}

/// Gives each sample the ego-compensated radial velocity `v_r + d · v_ego` of
/// its nearest dynamic radar return (positions compared in frame-`i` ego
/// coordinates, ties to the lowest radar index) and sets the radar origin.
/// `ego_velocity` is the sensor velocity in sensor coordinates, as estimated
/// by ego-motion; compensation makes the value the radial speed of the object
/// itself, which is what a flow vector expressed in a fixed frame measures. Samples farther than
/// `max_distance` keep `radial_velocity = None`. Positions are untouched.
pub fn associate_radial_velocity(
    samples: &[SceneFlowSample],
    frame_i: &RadarFrame,
    dyn_labels: &[bool],
    ego_pose_i: &RigidTransform,
    ego_velocity: &Vec3,
    max_distance: f64,
) -> Result<Vec<SceneFlowSample>, LiftError> {
    if dyn_labels.len() != frame_i.points.len() {
        return Err(LiftError::LabelMismatch {
            labels: dyn_labels.len(),
            points: frame_i.points.len(),
        });
    }
    let ego_from_sensor = ego_pose_i
        .inverse()
        .compose(&frame_i.sensor_from_world.inverse());
    let dynamic: Vec<usize> = (0..frame_i.points.len())
        .filter(|&i| dyn_labels[i])
        .collect();
    if dynamic.is_empty() {
        return Err(LiftError::NoDynamicRadarPoints);
    }
    // tree indices follow radar order, so tree ties resolve to the lowest radar index
    let tree = KdTree::build(
        dynamic
            .iter()
            .map(|&i| ego_from_sensor.apply(&frame_i.points[i].position))
            .collect(),
    );
    let origin = ego_from_sensor.apply(&Vec3::zeros());
    let max_d2 = max_distance * max_distance;
    Ok(samples
        .iter()
        .map(|s| {
            let nn = tree.nearest(&s.x_ti, 1)[0];
            let radial_velocity = (nn.dist2 <= max_d2)
                .then(|| frame_i.points[dynamic[nn.index as usize]].static_residual(ego_velocity));
            SceneFlowSample {
                radar_origin: origin,
                radial_velocity,
                ..*s
            }
        })
        .collect())
}
