// SPDX-License-Identifier: Apache-2.0

//! Radar-anchored ROIs and dynamic-mask compositing.
//!
//! Dynamic radar returns are projected into the image; a seeded subset
//! becomes ROI anchors. Each ROI carries a probability patch, and the global
//! confidence at a pixel is the maximum over all ROIs covering it. The mask is
//! `confidence > tau`.
//!
//! [`score_roi_geometric`] is a deterministic kernel scorer that stands in for
//! a learned per-ROI segmentation network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraModel;
use crate::radar::RadarFrame;
use crate::raster::DynamicMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error("patch values must lie in [0, 1] (got {0})")]
    PatchValue(f64),
    #[error("patch of {width}x{height} needs {expected} values, got {got}")]
    PatchSize {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("{labels} labels for a frame of {points} points")]
    LabelMismatch { labels: usize, points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    /// Square patch side, pixels.
    pub patch_size: u32,
    pub max_anchors: u32,
    /// Compositing threshold on the max-confidence map.
    pub tau: f64,
    /// Kernel width of the geometric scorer, pixels.
    pub sigma_px: f64,
    pub seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            max_anchors: 32,
            tau: 0.5,
            sigma_px: 24.0,
            seed: 0,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.patch_size == 0 {
            return Err(SegmentError::InvalidConfig("patch_size must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(SegmentError::InvalidConfig("tau must lie in [0, 1]".into()));
        }
        if !(self.sigma_px > 0.0) {
            return Err(SegmentError::InvalidConfig(
                "sigma_px must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A probability patch centred on an image pixel. Patch pixel `(c, r)` maps
/// to image pixel `(center_u - w/2 + c, center_v - h/2 + r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub center_u: i32,
    pub center_v: i32,
    width: u32,
    height: u32,
    patch: Vec<f64>,
}

impl Roi {
    pub fn new(
        center_u: i32,
        center_v: i32,
        width: u32,
        height: u32,
        patch: Vec<f64>,
    ) -> Result<Self, SegmentError> {
        let expected = width as usize * height as usize;
        if expected == 0 || patch.len() != expected {
            return Err(SegmentError::PatchSize {
                width,
                height,
                expected,
                got: patch.len(),
            });
        }
        if let Some(&bad) = patch.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SegmentError::PatchValue(bad));
        }
        Ok(Self {
            center_u,
            center_v,
            width,
            height,
            patch,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn patch(&self) -> &[f64] {
        &self.patch
    }

    /// Image column of patch column 0.
    pub fn left(&self) -> i64 {
        self.center_u as i64 - (self.width / 2) as i64
    }

    /// Image row of patch row 0.
    pub fn top(&self) -> i64 {
        self.center_v as i64 - (self.height / 2) as i64
    }

    /// Patch value at image pixel `(col, row)`, if covered.
    pub fn value_at(&self, col: i64, row: i64) -> Option<f64> {
        let c = col - self.left();
        let r = row - self.top();
        if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
            return None;
        }
        Some(self.patch[r as usize * self.width as usize + c as usize])
    }
}

fn check_labels(frame: &RadarFrame, labels: &[bool]) -> Result<(), SegmentError> {
    if labels.len() != frame.points.len() {
        return Err(SegmentError::LabelMismatch {
            labels: labels.len(),
            points: frame.points.len(),
        });
    }
    Ok(())
}

/// Image projections `(u, v)` of the dynamic returns that land in front of the
/// camera and inside the image, in radar-point order.
pub fn dynamic_projections(
    frame: &RadarFrame,
    labels: &[bool],
    cam: &CameraModel,
) -> Result<Vec<(f64, f64)>, SegmentError> {
    check_labels(frame, labels)?;
    Ok(frame
        .points
        .iter()
        .zip(labels)
        .filter(|(_, dynamic)| **dynamic)
        .filter_map(|(p, _)| cam.project(&cam.cam_from_ego.apply(&p.position)).ok())
        .filter(|(u, v)| cam.contains(*u, *v))
        .collect())
}

/// Anchor pixels for ROIs. When more than `max_anchors` dynamic returns
/// project into the image, a seeded uniform subset (without replacement) is
/// kept, preserving radar-point order.
pub fn project_dynamic_rois(
    frame: &RadarFrame,
    labels: &[bool],
    cam: &CameraModel,
    cfg: &SegmentConfig,
) -> Result<Vec<(i32, i32)>, SegmentError> {
    cfg.validate()?;
    let anchors: Vec<(i32, i32)> = dynamic_projections(frame, labels, cam)?
        .into_iter()
        .map(|(u, v)| {
            (
                (u.round() as i32).min(cam.width as i32 - 1),
                (v.round() as i32).min(cam.height as i32 - 1),
            )
        })
        .collect();
    let keep = cfg.max_anchors as usize;
    if anchors.len() <= keep {
        return Ok(anchors);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = rand::seq::index::sample(&mut rng, anchors.len(), keep).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| anchors[i]).collect())
}

/// Gaussian-kernel probability patch: the value at pixel `q` is the max over
/// dynamic projections falling inside the patch of
/// `exp(-|q - proj|² / (2 sigma²))`.
pub fn score_roi_geometric(
    frame: &RadarFrame,
    labels: &[bool],
    cam: &CameraModel,
    center: (i32, i32),
    cfg: &SegmentConfig,
) -> Result<Roi, SegmentError> {
    cfg.validate()?;
    check_labels(frame, labels)?;
    let size = cfg.patch_size;
    let left = center.0 as i64 - (size / 2) as i64;
    let top = center.1 as i64 - (size / 2) as i64;
    let inside: Vec<(f64, f64)> = frame
        .points
        .iter()
        .zip(labels)
        .filter(|(_, d)| **d)
        .filter_map(|(p, _)| cam.project(&cam.cam_from_ego.apply(&p.position)).ok())
        .filter(|(u, v)| {
            let c = u.round() as i64 - left;
            let r = v.round() as i64 - top;
            c >= 0 && r >= 0 && c < size as i64 && r < size as i64
        })
        .collect();
    let inv = 1.0 / (2.0 * cfg.sigma_px * cfg.sigma_px);
    let mut patch = vec![0.0; size as usize * size as usize];
    if !inside.is_empty() {
        for r in 0..size as usize {
            let qv = (top + r as i64) as f64;
            for c in 0..size as usize {
                let qu = (left + c as i64) as f64;
                patch[r * size as usize + c] = inside
                    .iter()
                    .map(|(u, v)| (-((qu - u).powi(2) + (qv - v).powi(2)) * inv).exp())
                    .fold(0.0, f64::max);
            }
        }
    }
    Roi::new(center.0, center.1, size, size, patch)
}

/// Global max-confidence map and, per pixel, the lowest ROI index attaining
/// the max (`None` where no ROI covers the pixel).
pub fn composite_confidence(rois: &[Roi], width: u32, height: u32) -> (Vec<f64>, Vec<Option<u32>>) {
    let w = width as usize;
    let mut conf = vec![0.0; w * height as usize];
    let mut winner = vec![None; w * height as usize];
    if w == 0 {
        return (conf, winner);
    }
    conf.par_chunks_mut(w)
        .zip(winner.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (conf_row, win_row))| {
            let row = row as i64;
            for (k, roi) in rois.iter().enumerate() {
                let r = row - roi.top();
                if r < 0 || r >= roi.height as i64 {
                    continue;
                }
                let c0 = roi.left().max(0);
                let c1 = (roi.left() + roi.width as i64).min(width as i64);
                let base = r as usize * roi.width as usize;
                for col in c0..c1 {
                    let val = roi.patch[base + (col - roi.left()) as usize];
                    let slot = col as usize;
                    if win_row[slot].is_none() || val > conf_row[slot] {
                        conf_row[slot] = val;
                        win_row[slot] = Some(k as u32);
                    }
                }
            }
        });
    (conf, winner)
}

/// Binary mask `max_i patch_i(u, v) > tau`; ROIs are clipped at the border.
pub fn composite_mask(rois: &[Roi], width: u32, height: u32, tau: f64) -> DynamicMask {
    let (conf, _) = composite_confidence(rois, width, height);
    let data = conf.into_iter().map(|c| (c > tau) as u8).collect();
    DynamicMask::new(width, height, data).expect("mask dimensions")
}

/// Anchors, geometric scoring and compositing in one call.
pub fn segment_frame(
    frame: &RadarFrame,
    labels: &[bool],
    cam: &CameraModel,
    cfg: &SegmentConfig,
) -> Result<DynamicMask, SegmentError> {
    let anchors = project_dynamic_rois(frame, labels, cam, cfg)?;
    let rois = anchors
        .into_iter()
        .map(|c| score_roi_geometric(frame, labels, cam, c, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(composite_mask(&rois, cam.width, cam.height, cfg.tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidTransform, Vec3};
    use crate::radar::RadarPoint;
    use proptest::prelude::*;

    fn cam() -> CameraModel {
        CameraModel::new(
            100.0,
            100.0,
            50.0,
            40.0,
            100,
            80,
            RigidTransform::identity(),
        )
        .unwrap()
    }

    fn frame_of(points: &[Vec3]) -> RadarFrame {
        RadarFrame::new(
            0.0,
            RigidTransform::identity(),
            points
                .iter()
                .map(|p| RadarPoint::new(*p, 1.0).unwrap())
                .collect(),
        )
    }

    fn uniform_roi(u: i32, v: i32, size: u32, val: f64) -> Roi {
        Roi::new(u, v, size, size, vec![val; (size * size) as usize]).unwrap()
    }

    fn brute_force(rois: &[Roi], w: u32, h: u32, tau: f64) -> Vec<u8> {
        let mut out = Vec::new();
        for row in 0..h as i64 {
            for col in 0..w as i64 {
                let m = rois
                    .iter()
                    .filter_map(|r| r.value_at(col, row))
                    .fold(0.0, f64::max);
                out.push((m > tau) as u8);
            }
        }
        out
    }

    #[test]
    fn no_dynamic_points_no_anchors() {
        let f = frame_of(&[Vec3::new(0.0, 0.0, 10.0)]);
        let a = project_dynamic_rois(&f, &[false], &cam(), &SegmentConfig::default()).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn on_axis_point_anchors_at_principal_point() {
        let f = frame_of(&[Vec3::new(0.0, 0.0, 10.0)]);
        let a = project_dynamic_rois(&f, &[true], &cam(), &SegmentConfig::default()).unwrap();
        assert_eq!(a, vec![(50, 40)]);
    }

    #[test]
    fn behind_and_offimage_points_dropped() {
        let f = frame_of(&[Vec3::new(0.0, 0.0, -10.0), Vec3::new(10.0, 0.0, 1.0)]);
        let a = project_dynamic_rois(&f, &[true, true], &cam(), &SegmentConfig::default()).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn anchor_subsampling_is_seeded() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new((i as f64 - 25.0) * 0.1, 0.0, 10.0))
            .collect();
        let f = frame_of(&pts);
        let labels = vec![true; 50];
        let cfg = SegmentConfig {
            max_anchors: 16,
            seed: 4,
            ..Default::default()
        };
        let a = project_dynamic_rois(&f, &labels, &cam(), &cfg).unwrap();
        let b = project_dynamic_rois(&f, &labels, &cam(), &cfg).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
        // oracle: same seeded draw over the full anchor list
        let all = project_dynamic_rois(
            &f,
            &labels,
            &cam(),
            &SegmentConfig {
                max_anchors: 1000,
                ..cfg
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut idx = rand::seq::index::sample(&mut rng, 50, 16).into_vec();
        idx.sort_unstable();
        let expect: Vec<_> = idx.iter().map(|&i| all[i]).collect();
        assert_eq!(a, expect);
        let c =
            project_dynamic_rois(&f, &labels, &cam(), &SegmentConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn geometric_score_kernel_shape() {
        let f = frame_of(&[Vec3::new(0.0, 0.0, 10.0)]);
        let cfg = SegmentConfig {
            patch_size: 21,
            sigma_px: 3.0,
            ..Default::default()
        };
        let roi = score_roi_geometric(&f, &[true], &cam(), (50, 40), &cfg).unwrap();
        assert_eq!(roi.value_at(50, 40), Some(1.0));
        let r: f64 = 4.0;
        let expect = (-r * r / (2.0 * 9.0)).exp();
        assert!((roi.value_at(54, 40).unwrap() - expect).abs() < 1e-15);
        assert!((roi.value_at(50, 36).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn geometric_score_empty_patch() {
        let f = frame_of(&[Vec3::new(0.0, 0.0, 10.0)]);
        let cfg = SegmentConfig {
            patch_size: 11,
            ..Default::default()
        };
        let roi = score_roi_geometric(&f, &[true], &cam(), (10, 10), &cfg).unwrap();
        assert!(roi.patch().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn geometric_score_two_points_is_pixelwise_max() {
        let p1 = Vec3::new(0.0, 0.0, 10.0);
        let p2 = Vec3::new(0.35, 0.12, 10.0);
        let f = frame_of(&[p1, p2]);
        let cfg = SegmentConfig {
            patch_size: 15,
            sigma_px: 2.5,
            ..Default::default()
        };
        let roi = score_roi_geometric(&f, &[true, true], &cam(), (52, 40), &cfg).unwrap();
        let proj = [(50.0, 40.0), (53.5, 41.2)];
        for row in 33..48i64 {
            for col in 45..60i64 {
                let expect = proj
                    .iter()
                    .map(|(u, v)| {
                        let d2 = (col as f64 - u).powi(2) + (row as f64 - v).powi(2);
                        (-d2 / (2.0 * 2.5 * 2.5)).exp()
                    })
                    .fold(0.0, f64::max);
                assert!((roi.value_at(col, row).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_roi_mask() {
        let roi = uniform_roi(10, 10, 5, 0.9);
        let m = composite_mask(&[roi], 30, 20, 0.5);
        for row in 0..20 {
            for col in 0..30 {
                let inside = (8..=12).contains(&col) && (8..=12).contains(&row);
                assert_eq!(m.get(col, row), inside);
            }
        }
    }

    #[test]
    fn overlap_takes_max() {
        let a = uniform_roi(10, 10, 5, 0.3);
        let b = uniform_roi(11, 10, 5, 0.7);
        let m = composite_mask(&[a.clone(), b.clone()], 30, 20, 0.5);
        assert!(m.get(10, 10));
        let (conf, win) = composite_confidence(&[a, b], 30, 20);
        assert_eq!(conf[10 * 30 + 10], 0.7);
        assert_eq!(win[10 * 30 + 10], Some(1));
        assert_eq!(win[10 * 30 + 8], Some(0));
    }

    #[test]
    fn tie_reports_lowest_roi() {
        let a = uniform_roi(10, 10, 5, 0.6);
        let b = uniform_roi(10, 10, 5, 0.6);
        let (_, win) = composite_confidence(&[a, b], 30, 20);
        assert_eq!(win[10 * 30 + 10], Some(0));
    }

    #[test]
    fn empty_roi_list_gives_empty_mask() {
        let m = composite_mask(&[], 7, 5, 0.5);
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn border_rois_are_clipped() {
        let roi = uniform_roi(0, 0, 6, 1.0);
        let m = composite_mask(&[roi], 10, 10, 0.5);
        assert_eq!(m.count(), 9);
        assert!(m.get(2, 2) && !m.get(3, 0));
    }

    fn arb_rois() -> impl Strategy<Value = Vec<Roi>> {
        prop::collection::vec(
            (-5i32..45, -5i32..35, 1u32..12, 1u32..12, any::<u64>()),
            0..8,
        )
        .prop_map(|specs| {
            specs
                .into_iter()
                .map(|(u, v, w, h, seed)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let patch = (0..w * h)
                        .map(|_| rand::Rng::random_range(&mut rng, 0.0..=1.0))
                        .collect();
                    Roi::new(u, v, w, h, patch).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn composite_matches_brute_force(rois in arb_rois(), tau in 0.0..1.0f64) {
            let m = composite_mask(&rois, 40, 30, tau);
            prop_assert_eq!(m.data(), &brute_force(&rois, 40, 30, tau)[..]);
        }

        #[test]
        fn lowering_tau_is_monotone(rois in arb_rois(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let m_hi = composite_mask(&rois, 40, 30, hi);
            let m_lo = composite_mask(&rois, 40, 30, lo);
            for (h, l) in m_hi.data().iter().zip(m_lo.data()) {
                prop_assert!(*h <= *l);
            }
        }

        #[test]
        fn order_independent(rois in arb_rois(), tau in 0.0..1.0f64) {
            let mut rev = rois.clone();
            rev.reverse();
            prop_assert_eq!(composite_mask(&rois, 40, 30, tau), composite_mask(&rev, 40, 30, tau));
        }

        #[test]
        fn nothing_outside_footprints(rois in arb_rois()) {
            let m = composite_mask(&rois, 40, 30, 0.0);
            for row in 0..30i64 {
                for col in 0..40i64 {
                    if rois.iter().all(|r| r.value_at(col, row).is_none()) {
                        prop_assert!(!m.get(col as u32, row as u32));
                    }
                }
            }
        }
    }
}
