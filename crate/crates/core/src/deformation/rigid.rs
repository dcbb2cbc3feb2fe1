// SPDX-License-Identifier: Apache-2.0

//! Closed-form rigid baseline: one best-fit SE(3) per consecutive frame pair,
//! chained from the middle keyframe.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{DeformError, DeformationField, TimeRange};
use crate::flow_lift::SceneFlowSample;
use crate::geometry::{RigidTransform, Vec3};

/// Second singular value of the centred source scatter, relative to the first,
/// below which correspondences count as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Keyframe transforms `canonical → frame t` with slerp between keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTrajectoryField {
    /// Keyframe times in seconds, strictly increasing.
    pub timestamps: Vec<f64>,
    pub transforms: Vec<RigidTransform>,
    /// Index of the keyframe whose transform is the identity.
    pub canonical_index: usize,
}

impl RigidTrajectoryField {
    fn pose_at(&self, seconds: f64) -> RigidTransform {
        let ts = &self.timestamps;
        if seconds <= ts[0] {
            return self.transforms[0];
        }
        let last = ts.len() - 1;
        if seconds >= ts[last] {
            return self.transforms[last];
        }
        let k = ts.partition_point(|&t| t <= seconds) - 1;
        let alpha = (seconds - ts[k]) / (ts[k + 1] - ts[k]);
        self.transforms[k].interpolate(&self.transforms[k + 1], alpha)
    }
}

impl DeformationField for RigidTrajectoryField {
    fn forward(&self, x: &Vec3, t: f64) -> Vec3 {
        self.pose_at(self.time_range().seconds(t)).apply(x)
    }

    fn inverse(&self, y: &Vec3, t: f64) -> Vec3 {
        self.pose_at(self.time_range().seconds(t))
            .inverse()
            .apply(y)
    }

    fn time_range(&self) -> TimeRange {
        TimeRange::new(self.timestamps[0], *self.timestamps.last().unwrap())
    }
}

/// Least-squares rigid transform with `T · src ≈ dst` (Kabsch, no scale).
/// `None` for fewer than three or collinear correspondences.
pub fn fit_rigid_pair(src: &[Vec3], dst: &[Vec3]) -> Option<RigidTransform> {
    let n = src.len().min(dst.len());
    if n < 3 {
        return None;
    }
    let ca = src[..n].iter().sum::<Vec3>() / n as f64;
    let cb = dst[..n].iter().sum::<Vec3>() / n as f64;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        let (a, b) = (a - ca, b - cb);
        h += a * b.transpose();
        scatter += a * a.transpose();
    }
    let sv = scatter.singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|x, y| y.total_cmp(x));
    if !(s[0] > 0.0) || s[1] <= COLLINEAR_TOL * s[0] {
        return None;
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Some(RigidTransform::new(rotation, cb - rotation * ca))
}

/// Fits one transform per consecutive pair `(timestamps[k], timestamps[k+1])`
/// from the samples whose `(t_i, t_j)` match that pair exactly, then chains
/// them so the middle keyframe is the identity.
pub fn fit_rigid(
    samples: &[SceneFlowSample],
    timestamps: &[f64],
) -> Result<RigidTrajectoryField, DeformError> {
    if timestamps.len() < 2 {
        return Err(DeformError::InvalidConfig(
            "need at least two timestamps".into(),
        ));
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DeformError::InvalidConfig(
            "timestamps must increase".into(),
        ));
    }
    let pairs: Vec<RigidTransform> = timestamps
        .windows(2)
        .map(|w| {
            let (src, dst): (Vec<Vec3>, Vec<Vec3>) = samples
                .iter()
                .filter(|s| s.t_i == w[0] && s.t_j == w[1])
                .map(|s| (s.x_ti, s.x_tj))
                .unzip();
            fit_rigid_pair(&src, &dst).ok_or(DeformError::DegenerateCorrespondences {
                t_i: w[0],
                t_j: w[1],
            })
        })
        .collect::<Result<_, _>>()?;
    let c = (timestamps.len() - 1) / 2;
    let mut transforms = vec![RigidTransform::identity(); timestamps.len()];
    for k in c..pairs.len() {
        transforms[k + 1] = pairs[k].compose(&transforms[k]);
    }
    for k in (0..c).rev() {
        transforms[k] = pairs[k].inverse().compose(&transforms[k + 1]);
    }
    Ok(RigidTrajectoryField {
        timestamps: timestamps.to_vec(),
        transforms,
        canonical_index: c,
    })
}
