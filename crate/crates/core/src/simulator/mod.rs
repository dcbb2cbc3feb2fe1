// SPDX-License-Identifier: Apache-2.0

//! Synthetic driving scenes with exact ground truth.
//!
//! World frame: ground plane `z = 0`, `+z` up. The ego (and radar) origin
//! rides at `ego_height` and follows a unicycle trajectory of constant speed
//! and yaw-rate segments. Static and dynamic obstacles are axis-aligned boxes;
//! dynamic boxes translate at constant world velocity.
//!
//! Per frame the simulator ray-casts a metric z-depth image, a dynamic mask,
//! a surface-id raster and the optical flow to the next frame, and samples
//! radar returns with Doppler velocities. Frames are generated in parallel
//! from per-frame seeds, so output is identical for any thread count.

mod evaluate;
mod files;
pub mod raycast;

pub use evaluate::{evaluate, true_target, MetricsReport, Predictions};
pub use files::{load_scene, write_scene, SceneFiles};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, RigidTransform, Vec3};
use crate::io::IoError;
use crate::radar::{RadarFrame, RadarPoint};
use crate::raster::{DepthImage, DynamicMask, FlowImage, ScaleState};
use crate::seed::derive_indexed;
use raycast::{cast, surface_box, Aabb, Hit, SKY};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSegment {
    /// Seconds; the last segment extends indefinitely.
    pub duration: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoTrajectory {
    /// World `(x, y)` at `t = 0`.
    pub start: [f64; 2],
    pub start_yaw: f64,
    /// Height of the ego origin above the ground, metres.
    pub height: f64,
    pub segments: Vec<EgoSegment>,
}

impl EgoTrajectory {
    /// `(x, y, yaw, speed)` at time `t`.
    fn state(&self, t: f64) -> (f64, f64, f64, f64) {
        let (mut x, mut y, mut yaw) = (self.start[0], self.start[1], self.start_yaw);
        let mut remaining = t;
        let segs = &self.segments;
        let mut speed = 0.0;
        for (k, s) in segs.iter().enumerate() {
            let last = k + 1 == segs.len();
            let tau = if last {
                remaining
            } else {
                remaining.min(s.duration)
            };
            speed = s.speed;
            if s.yaw_rate == 0.0 {
                x += s.speed * tau * yaw.cos();
                y += s.speed * tau * yaw.sin();
            } else {
                let r = s.speed / s.yaw_rate;
                let yaw2 = yaw + s.yaw_rate * tau;
                x += r * (yaw2.sin() - yaw.sin());
                y -= r * (yaw2.cos() - yaw.cos());
                yaw = yaw2;
            }
            remaining -= tau;
            if remaining <= 0.0 {
                break;
            }
        }
        (x, y, yaw, speed)
    }

    /// `world_from_ego` at time `t`.
    pub fn pose(&self, t: f64) -> RigidTransform {
        let (x, y, yaw, _) = self.state(t);
        RigidTransform::from_yaw(yaw, Vec3::new(x, y, self.height))
    }

    /// Ego velocity in world coordinates.
    pub fn world_velocity(&self, t: f64) -> Vec3 {
        let (_, _, yaw, v) = self.state(t);
        Vec3::new(v * yaw.cos(), v * yaw.sin(), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    /// Box centre at `t = 0`, world metres.
    pub center: Vec3,
    /// Full extents along world x, y, z.
    pub size: Vec3,
    /// World velocity, m/s; zero for static boxes.
    #[serde(default = "Vec3::zeros")]
    pub velocity: Vec3,
}

impl BoxSpec {
    pub fn on_ground(x: f64, y: f64, size: Vec3, velocity: Vec3) -> Self {
        Self {
            center: Vec3::new(x, y, size.z / 2.0),
            size,
            velocity,
        }
    }

    pub fn center_at(&self, t: f64) -> Vec3 {
        self.center + self.velocity * t
    }

    fn aabb_at(&self, t: f64) -> Aabb {
        Aabb::from_center(self.center_at(t), self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarModel {
    /// Full horizontal field of view, degrees.
    pub azimuth_fov_deg: f64,
    /// Full vertical field of view, degrees.
    pub elevation_fov_deg: f64,
    pub max_range: f64,
    pub points_per_frame: u32,
    /// Per-axis position noise σ_p, metres.
    pub position_noise: f64,
    /// Radial velocity noise σ_v, m/s.
    pub velocity_noise: f64,
    /// Fraction of rays aimed at boxes; the rest are uniform over the FOV.
    pub box_fraction: f64,
}

impl Default for RadarModel {
    fn default() -> Self {
        Self {
            azimuth_fov_deg: 120.0,
            elevation_fov_deg: 30.0,
            max_range: 80.0,
            points_per_frame: 300,
            position_noise: 0.05,
            velocity_noise: 0.1,
            box_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub duration: f64,
    pub frame_rate: f64,
    pub ego: EgoTrajectory,
    pub static_boxes: Vec<BoxSpec>,
    pub dynamic_boxes: Vec<BoxSpec>,
    pub radar: RadarModel,
    pub camera: CameraModel,
    /// Ground-truth scale `s`: relative depth is metric depth divided by it.
    pub relative_depth_scale: f64,
    pub seed: u64,
}

/// 320×180 camera, fx = fy = 300, mounted 0.5 m ahead of and 0.7 m above the
/// ego origin, looking along ego +x.
pub fn default_camera() -> CameraModel {
    CameraModel::forward_facing(300.0, 300.0, 320, 180, Vec3::new(0.5, 0.0, 0.7))
        .expect("valid default camera")
}

fn car(x: f64, y: f64, vx: f64, vy: f64) -> BoxSpec {
    BoxSpec::on_ground(x, y, Vec3::new(4.5, 1.9, 1.6), Vec3::new(vx, vy, 0.0))
}

impl Default for SceneConfig {
    /// The standard test scene: 5 s at 10 Hz, ego at 8 m/s with a gentle
    /// left curve, a leading, an oncoming and a laterally merging car, and
    /// walls and parked obstacles along the road.
    fn default() -> Self {
        Self {
            duration: 5.0,
            frame_rate: 10.0,
            ego: EgoTrajectory {
                start: [0.0, 0.0],
                start_yaw: 0.0,
                height: 0.8,
                segments: vec![
                    EgoSegment {
                        duration: 2.0,
                        speed: 8.0,
                        yaw_rate: 0.0,
                    },
                    EgoSegment {
                        duration: 3.0,
                        speed: 8.0,
                        yaw_rate: 0.04,
                    },
                ],
            },
            static_boxes: vec![
                BoxSpec::on_ground(35.0, 10.0, Vec3::new(40.0, 1.5, 4.0), Vec3::zeros()),
                BoxSpec::on_ground(40.0, -10.0, Vec3::new(50.0, 1.5, 3.0), Vec3::zeros()),
                BoxSpec::on_ground(80.0, 6.0, Vec3::new(6.0, 12.0, 6.0), Vec3::zeros()),
                BoxSpec::on_ground(22.0, -6.5, Vec3::new(4.0, 2.0, 1.5), Vec3::zeros()),
            ],
            dynamic_boxes: vec![
                // leading, same lane
                car(18.0, 0.0, 11.0, 0.0),
                // oncoming, left lane
                car(70.0, 3.5, -9.0, 0.0),
                // merging from the right, ahead of the ego
                car(14.0, -5.0, 9.0, 0.9),
            ],
            radar: RadarModel::default(),
            camera: default_camera(),
            relative_depth_scale: 3.0,
            seed: 7,
        }
    }
}

impl SceneConfig {
    /// Stationary ego, flat ground, a single box translating at constant
    /// velocity; no noise.
    pub fn rigid_translation(velocity: Vec3) -> Self {
        let mut cfg = Self::default();
        cfg.ego.segments = vec![EgoSegment {
            duration: 1.0,
            speed: 0.0,
            yaw_rate: 0.0,
        }];
        cfg.static_boxes.clear();
        cfg.dynamic_boxes = vec![car(15.0, 0.5, velocity.x, velocity.y)];
        cfg.radar.position_noise = 0.0;
        cfg.radar.velocity_noise = 0.0;
        cfg
    }

    pub fn noise_free(mut self) -> Self {
        self.radar.position_noise = 0.0;
        self.radar.velocity_noise = 0.0;
        self
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }

    pub fn timestamp(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive".into());
        }
        if !(self.duration > 0.0) || self.frame_count() < 2 {
            return bad("need at least two frames".into());
        }
        if self.ego.segments.is_empty() {
            return bad("ego trajectory needs a segment".into());
        }
        if !(self.ego.height > 0.0) {
            return bad("ego height must be positive".into());
        }
        let r = &self.radar;
        if !(r.position_noise >= 0.0 && r.velocity_noise >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        if !(r.max_range > 0.0 && r.azimuth_fov_deg > 0.0 && r.elevation_fov_deg > 0.0) {
            return bad("radar FOV and range must be positive".into());
        }
        if !(0.0..=1.0).contains(&r.box_fraction) {
            return bad("box_fraction must lie in [0, 1]".into());
        }
        for (k, b) in self
            .static_boxes
            .iter()
            .chain(&self.dynamic_boxes)
            .enumerate()
        {
            if !b.size.iter().all(|v| *v > 0.0) {
                return bad(format!("box {k} has a non-positive extent"));
            }
        }
        if !(self.relative_depth_scale > 0.0) {
            return bad("relative_depth_scale must be positive".into());
        }
        self.camera
            .validate()
            .or_else(|e| bad(format!("camera: {e}")))
    }

    fn boxes(&self) -> impl Iterator<Item = &BoxSpec> {
        self.static_boxes.iter().chain(&self.dynamic_boxes)
    }

    /// World velocity of the surface with id `surface`.
    pub fn surface_velocity(&self, surface: u32) -> Vec3 {
        surface_box(surface)
            .and_then(|k| self.boxes().nth(k))
            .map_or_else(Vec3::zeros, |b| b.velocity)
    }

    pub fn is_dynamic_surface(&self, surface: u32) -> bool {
        surface_box(surface).is_some_and(|k| k >= self.static_boxes.len())
    }

    fn aabbs_at(&self, t: f64) -> Vec<Aabb> {
        self.boxes().map(|b| b.aabb_at(t)).collect()
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub index: usize,
    pub timestamp: f64,
    pub radar: RadarFrame,
    pub dyn_labels_gt: Vec<bool>,
    pub depth_metric: DepthImage,
    pub depth_relative: DepthImage,
    pub mask_gt: DynamicMask,
    /// Flow to the next frame; `None` on the last frame.
    pub flow_to_next: Option<FlowImage>,
    /// `world_from_ego`.
    pub ego_pose: RigidTransform,
    /// Ego (= radar) velocity in ego coordinates.
    pub ego_velocity: Vec3,
    /// Dynamic box centres, world coordinates.
    pub object_centers: Vec<Vec3>,
    /// Per-pixel surface ids, row-major (see [`raycast`]).
    pub surface_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub config: SceneConfig,
    pub frames: Vec<FrameBundle>,
}

impl Simulation {
    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn radar_frames(&self) -> Vec<RadarFrame> {
        self.frames.iter().map(|f| f.radar.clone()).collect()
    }
}

pub fn simulate(cfg: &SceneConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let frames = (0..cfg.frame_count())
        .into_par_iter()
        .map(|k| simulate_frame(cfg, k))
        .collect();
    Ok(Simulation {
        config: cfg.clone(),
        frames,
    })
}

struct Rasters {
    depth: Vec<f64>,
    mask: Vec<u8>,
    surfaces: Vec<u32>,
    flow: Vec<[f64; 2]>,
}

fn render(cfg: &SceneConfig, t: f64, with_flow: bool) -> Rasters {
    let cam = &cfg.camera;
    let world_from_cam = cfg.ego.pose(t).compose(&cam.ego_from_cam());
    let dt = 1.0 / cfg.frame_rate;
    let next_cam_from_world = cfg.ego.pose(t + dt).compose(&cam.ego_from_cam()).inverse();
    let boxes = cfg.aabbs_at(t);
    let origin = world_from_cam.translation;
    let (w, h) = (cam.width as usize, cam.height as usize);
    // per pixel: depth, mask, surface id, flow
    type Pixel = (f64, u8, u32, [f64; 2]);
    let rows: Vec<Vec<Pixel>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    // unnormalised ray with camera-frame z = 1, so the hit
                    // distance is the z-depth
                    let ray_cam = Vec3::new(
                        (col as f64 - cam.cx) / cam.fx,
                        (row as f64 - cam.cy) / cam.fy,
                        1.0,
                    );
                    let dir = world_from_cam.apply_vector(&ray_cam);
                    match cast(&origin, &dir, &boxes) {
                        None => (0.0, 0, SKY, [0.0, 0.0]),
                        Some(Hit {
                            distance,
                            point,
                            surface,
                        }) => {
                            let flow = if with_flow {
                                let moved = point + cfg.surface_velocity(surface) * dt;
                                cam.project(&next_cam_from_world.apply(&moved))
                                    .map_or([0.0, 0.0], |(u, v)| [u - col as f64, v - row as f64])
                            } else {
                                [0.0, 0.0]
                            };
                            (
                                distance,
                                cfg.is_dynamic_surface(surface) as u8,
                                surface,
                                flow,
                            )
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Rasters {
        depth: Vec::with_capacity(w * h),
        mask: Vec::with_capacity(w * h),
        surfaces: Vec::with_capacity(w * h),
        flow: Vec::with_capacity(w * h),
    };
    for (d, m, s, f) in rows.into_iter().flatten() {
        out.depth.push(d);
        out.mask.push(m);
        out.surfaces.push(s);
        out.flow.push(f);
    }
    out
}

/// Unit direction inside the radar FOV (ego frame).
fn fov_direction(rng: &mut impl Rng, r: &RadarModel) -> Vec3 {
    let az = (rng.random::<f64>() - 0.5) * r.azimuth_fov_deg.to_radians();
    let el = (rng.random::<f64>() - 0.5) * r.elevation_fov_deg.to_radians();
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

fn in_fov(d: &Vec3, r: &RadarModel) -> bool {
    let az = d.y.atan2(d.x).abs().to_degrees();
    let el = (d.z / d.norm()).asin().abs().to_degrees();
    az <= r.azimuth_fov_deg / 2.0 && el <= r.elevation_fov_deg / 2.0
}

fn sample_radar(cfg: &SceneConfig, t: f64, rng: &mut ChaCha8Rng) -> (RadarFrame, Vec<bool>) {
    let r = &cfg.radar;
    let pose = cfg.ego.pose(t);
    let ego_from_world = pose.inverse();
    let v_sensor = cfg.ego.world_velocity(t);
    let boxes = cfg.aabbs_at(t);
    let specs: Vec<&BoxSpec> = cfg.boxes().collect();
    // boxes whose centre is inside the FOV and range, for aimed rays
    let targets: Vec<usize> = (0..boxes.len())
        .filter(|&k| {
            let c = ego_from_world.apply(&specs[k].center_at(t));
            c.norm() <= r.max_range && in_fov(&c, r)
        })
        .collect();
    let pos_noise = Normal::new(0.0, r.position_noise).unwrap();
    let vel_noise = Normal::new(0.0, r.velocity_noise).unwrap();
    let origin = pose.translation;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let wanted = r.points_per_frame as usize;
    let mut attempts = 0;
    while points.len() < wanted && attempts < 4 * wanted {
        attempts += 1;
        let aimed = !targets.is_empty() && rng.random::<f64>() < r.box_fraction;
        let dir_world = if aimed {
            let b = &boxes[targets[rng.random_range(0..targets.len())]];
            let p = Vec3::new(
                rng.random_range(b.min.x..b.max.x),
                rng.random_range(b.min.y..b.max.y),
                rng.random_range(b.min.z..b.max.z),
            );
            (p - origin).normalize()
        } else {
            pose.apply_vector(&fov_direction(rng, r))
        };
        let Some(hit) = cast(&origin, &dir_world, &boxes) else {
            continue;
        };
        let local = ego_from_world.apply(&hit.point);
        if hit.distance > r.max_range || !in_fov(&local, r) {
            continue;
        }
        let los = (hit.point - origin) / hit.distance;
        let vr = los.dot(&(cfg.surface_velocity(hit.surface) - v_sensor));
        let noisy = local
            + Vec3::new(
                pos_noise.sample(rng),
                pos_noise.sample(rng),
                pos_noise.sample(rng),
            );
        if let Ok(p) = RadarPoint::new(noisy, vr + vel_noise.sample(rng)) {
            points.push(p);
            labels.push(cfg.is_dynamic_surface(hit.surface));
        }
    }
    (RadarFrame::new(t, ego_from_world, points), labels)
}

fn simulate_frame(cfg: &SceneConfig, k: usize) -> FrameBundle {
    let t = cfg.timestamp(k);
    let last = k + 1 == cfg.frame_count();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "simulate/frame", k as u64));
    let (radar, dyn_labels_gt) = sample_radar(cfg, t, &mut rng);
    let rasters = render(cfg, t, !last);
    let cam = &cfg.camera;
    let s = cfg.relative_depth_scale;
    // metric = relative · s holds bit-for-bit by construction
    let relative: Vec<f64> = rasters.depth.iter().map(|d| d / s).collect();
    let metric: Vec<f64> = relative.iter().map(|d| d * s).collect();
    let pose = cfg.ego.pose(t);
    FrameBundle {
        index: k,
        timestamp: t,
        radar,
        dyn_labels_gt,
        depth_metric: DepthImage::new(cam.width, cam.height, metric, ScaleState::Metric)
            .expect("ray-cast depth is finite"),
        depth_relative: DepthImage::new(cam.width, cam.height, relative, ScaleState::Relative)
            .expect("ray-cast depth is finite"),
        mask_gt: DynamicMask::new(cam.width, cam.height, rasters.mask).expect("mask size"),
        flow_to_next: (!last)
            .then(|| FlowImage::new(cam.width, cam.height, rasters.flow).expect("flow size")),
        ego_pose: pose,
        ego_velocity: pose.inverse().apply_vector(&cfg.ego.world_velocity(t)),
        object_centers: cfg.dynamic_boxes.iter().map(|b| b.center_at(t)).collect(),
        surface_ids: rasters.surfaces,
    }
}

/// Pixel-centre surface id lookup.
pub fn surface_at(frame: &FrameBundle, width: u32, col: u32, row: u32) -> u32 {
    frame.surface_ids[row as usize * width as usize + col as usize]
}
