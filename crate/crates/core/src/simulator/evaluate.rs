// SPDX-License-Identifier: Apache-2.0

//! Scoring pipeline outputs against simulator ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raycast::SKY;
use super::{surface_at, SimError, Simulation};
use crate::deformation::radial_residual;
use crate::flow_lift::SceneFlowSample;
use crate::geometry::Vec3;
use crate::io::{write_json, IoError};

/// Stage outputs to score. Empty `scales` or `warped` skip those metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    /// Ego velocity per frame, ego coordinates.
    pub ego_velocities: Vec<Vec3>,
    /// Dynamic labels per frame, radar-point order.
    pub dyn_labels: Vec<Vec<bool>>,
    /// Recovered scale per frame.
    pub scales: Vec<f64>,
    pub samples: Vec<SceneFlowSample>,
    /// Predicted `x̂_tj` per sample (frame-`t_j` ego coordinates).
    pub warped: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub ego_velocity_rmse: f64,
    pub label_precision: f64,
    pub label_recall: f64,
    pub label_f1: f64,
    /// Mean `|s − s_gt| / s_gt` over frames.
    pub scale_relative_error: Option<f64>,
    /// Mean flow-vector endpoint error of the lifted samples, metres.
    pub scene_flow_epe: Option<f64>,
    /// Mean flow-vector endpoint error of the warped samples, metres.
    pub warp_epe: Option<f64>,
    /// Mean component of the warp error along the radar line of sight.
    pub warp_radial_error: Option<f64>,
    pub rad_samples: usize,
    pub rad_residual_mean: Option<f64>,
    pub rad_residual_median: Option<f64>,
    pub rad_residual_max: Option<f64>,
}

impl MetricsReport {
    fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("frames", Some(self.frames as f64)),
            ("ego_velocity_rmse", Some(self.ego_velocity_rmse)),
            ("label_precision", Some(self.label_precision)),
            ("label_recall", Some(self.label_recall)),
            ("label_f1", Some(self.label_f1)),
            ("scale_relative_error", self.scale_relative_error),
            ("scene_flow_epe", self.scene_flow_epe),
            ("warp_epe", self.warp_epe),
            ("warp_radial_error", self.warp_radial_error),
            ("rad_samples", Some(self.rad_samples as f64)),
            ("rad_residual_mean", self.rad_residual_mean),
            ("rad_residual_median", self.rad_residual_median),
            ("rad_residual_max", self.rad_residual_max),
        ]
    }

    /// `metric,value` rows; missing metrics are left empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let path = path.as_ref();
        let wrap = |e: csv::Error| IoError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        w.write_record(["metric", "value"]).map_err(wrap)?;
        for (name, v) in self.rows() {
            let v = v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([name, v.as_str()]).map_err(wrap)?;
        }
        w.flush().map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        write_json(path, self)
    }
}

fn frame_index(sim: &Simulation, t: f64) -> Option<usize> {
    let k = (t * sim.config.frame_rate).round();
    (k >= 0.0 && (k as usize) < sim.frames.len()).then_some(k as usize)
}

/// Ground-truth flow vector `F` of a sample in frame-`t_i` ego coordinates:
/// the world displacement of the surface seen at its source pixel.
pub fn true_flow_vector(sim: &Simulation, s: &SceneFlowSample) -> Option<Vec3> {
    let f = &sim.frames[frame_index(sim, s.t_i)?];
    let surface = surface_at(
        f,
        sim.config.camera.width,
        s.source_pixel[0],
        s.source_pixel[1],
    );
    if surface == SKY {
        return None;
    }
    let v = sim.config.surface_velocity(surface);
    Some(f.ego_pose.inverse().apply_vector(&(v * s.dt())))
}

/// Ground-truth position at `t_j` (frame-`t_j` ego coordinates) of the
/// surface point seen at the sample's source pixel.
pub fn true_target(sim: &Simulation, s: &SceneFlowSample) -> Option<Vec3> {
    let f = &sim.frames[frame_index(sim, s.t_i)?];
    let cam = &sim.config.camera;
    let [col, row] = s.source_pixel;
    let surface = surface_at(f, cam.width, col, row);
    if surface == SKY {
        return None;
    }
    let d = f.depth_metric.get(col, row);
    let p_cam = cam.back_project(col as f64, row as f64, d).ok()?;
    let world = f.ego_pose.apply(&cam.ego_from_cam().apply(&p_cam));
    let moved = world + sim.config.surface_velocity(surface) * s.dt();
    Some(sim.config.ego.pose(s.t_j).inverse().apply(&moved))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn mismatch(what: &str, expected: usize, got: usize) -> Result<(), SimError> {
    if expected != got {
        return Err(SimError::LengthMismatch {
            what: what.into(),
            expected,
            got,
        });
    }
    Ok(())
}

pub fn evaluate(sim: &Simulation, pred: &Predictions) -> Result<MetricsReport, SimError> {
    let n = sim.frames.len();
    mismatch("ego velocities", n, pred.ego_velocities.len())?;
    mismatch("label frames", n, pred.dyn_labels.len())?;
    if !pred.scales.is_empty() {
        mismatch("scales", n, pred.scales.len())?;
    }
    if !pred.warped.is_empty() {
        mismatch("warped samples", pred.samples.len(), pred.warped.len())?;
    }

    let mut sq = 0.0;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (k, f) in sim.frames.iter().enumerate() {
        sq += (pred.ego_velocities[k] - f.ego_velocity).norm_squared();
        mismatch(
            &format!("labels of frame {k}"),
            f.dyn_labels_gt.len(),
            pred.dyn_labels[k].len(),
        )?;
        for (p, g) in pred.dyn_labels[k].iter().zip(&f.dyn_labels_gt) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let s_gt = sim.config.relative_depth_scale;
    let scale_errors: Vec<f64> = pred
        .scales
        .iter()
        .map(|s| (s - s_gt).abs() / s_gt)
        .collect();

    let mut flow_err = Vec::new();
    let mut warp_err = Vec::new();
    let mut warp_radial = Vec::new();
    let mut rad = Vec::new();
    for (k, s) in pred.samples.iter().enumerate() {
        let Some(f_gt) = true_flow_vector(sim, s) else {
            continue;
        };
        flow_err.push((s.flow_in_source_frame() - f_gt).norm());
        if let Some(y) = pred.warped.get(k) {
            let f_pred = s.t_j_to_i.apply(y) - s.x_ti;
            warp_err.push((f_pred - f_gt).norm());
            let los = s.x_ti - s.radar_origin;
            if los.norm() > 0.0 {
                warp_radial.push((f_pred - f_gt).dot(&los.normalize()).abs());
            }
            if let Some(vr) = s.radial_velocity {
                rad.push(radial_residual(s, y, vr).0.abs());
            }
        }
    }
    rad.sort_by(f64::total_cmp);
    Ok(MetricsReport {
        frames: n,
        ego_velocity_rmse: (sq / n.max(1) as f64).sqrt(),
        label_precision: precision,
        label_recall: recall,
        label_f1: f1,
        scale_relative_error: mean(&scale_errors),
        scene_flow_epe: mean(&flow_err),
        warp_epe: mean(&warp_err),
        warp_radial_error: mean(&warp_radial),
        rad_samples: rad.len(),
        rad_residual_mean: mean(&rad),
        rad_residual_median: (!rad.is_empty()).then(|| crate::scale::median(&mut rad.clone())),
        rad_residual_max: rad.last().copied(),
    })
}
