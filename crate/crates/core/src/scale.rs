// SPDX-License-Identifier: Apache-2.0

//! Metric scale recovery for relative depth maps.
//!
//! Visual points (back-projected relative depth) and static radar returns are
//! both mapped onto the unit sphere. Each radar direction picks its three
//! nearest visual directions from a KD-tree; those three visual points span a
//! local plane with normal `n = (p_a - p_b) × (p_b - p_c)`, and the radar
//! point gives one scale sample `s = (n · p_radar) / (n · p_a)`. Samples pass
//! only when the neighbourhood is compact on the sphere, has similar depths,
//! and is coplanar with the depth pixels around the radar projection. A
//! histogram vote over all samples gives the global scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Vec3};
use crate::kdtree::KdTree;
use crate::radar::RadarFrame;
use crate::raster::{DepthImage, ScaleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("point has zero norm")]
    ZeroNorm,
    #[error("need at least 3 visual points, got {0}")]
    TooFewPoints(usize),
    #[error("visual neighbours are collinear")]
    DegeneratePlane,
    #[error("plane normal nearly perpendicular to the anchor ray (|n·p| = {0})")]
    UnstableDenominator(f64),
    #[error("scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("frame has no static radar points")]
    NoStaticPoints,
    #[error("no scale samples inside the histogram range")]
    NoValidSamples,
    #[error("depth image must be relative-scale")]
    NotRelative,
    #[error("{labels} labels for a frame of {points} points")]
    LabelMismatch { labels: usize, points: usize },
    #[error("invalid scale config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// Max pairwise angle between the radar direction and its three visual
    /// neighbours, radians.
    pub max_spherical_spread: f64,
    /// Max ratio of largest to smallest neighbour depth.
    pub max_depth_ratio: f64,
    /// Min `|n̂ · p̂_a|`.
    pub min_normal_dot: f64,
    pub hist_min: f64,
    pub hist_max: f64,
    pub hist_bins: u32,
    pub subsample_stride: u32,
    /// Max distance, relative to range, of the depth pixels around the radar
    /// projection from the neighbour plane.
    pub coplanarity_tol: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            max_spherical_spread: 0.02,
            max_depth_ratio: 1.15,
            min_normal_dot: 0.05,
            hist_min: 0.05,
            hist_max: 50.0,
            hist_bins: 512,
            subsample_stride: 4,
            coplanarity_tol: 1e-3,
        }
    }
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<(), ScaleError> {
        let bad = |m: &str| Err(ScaleError::InvalidConfig(m.into()));
        if !(self.hist_min < self.hist_max) {
            return bad("hist_min must be < hist_max");
        }
        if self.hist_bins < 2 {
            return bad("hist_bins must be >= 2");
        }
        if !(self.max_depth_ratio > 1.0) {
            return bad("max_depth_ratio must be > 1");
        }
        if self.subsample_stride == 0 {
            return bad("subsample_stride must be >= 1");
        }
        if !(self.max_spherical_spread > 0.0) || !(self.coplanarity_tol >= 0.0) {
            return bad("spread and coplanarity tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub radar_index: u32,
    pub scale: f64,
    /// Indices into the visual point list, nearest first.
    pub neighbor_indices: [u32; 3],
}

/// Why candidate radar points were rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub behind_camera: usize,
    pub spread: usize,
    pub depth_ratio: usize,
    pub coplanarity: usize,
    pub plane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSamples {
    pub samples: Vec<ScaleSample>,
    pub static_candidates: usize,
    pub rejections: RejectionCounts,
}

impl ScaleSamples {
    pub fn acceptance_rate(&self) -> f64 {
        if self.static_candidates == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.static_candidates as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.scale).collect()
    }
}

pub fn sphere_directions(points: &[Vec3]) -> Result<Vec<Vec3>, ScaleError> {
    points
        .iter()
        .map(|p| {
            let n = p.norm();
            if n > 1e-6 {
                Ok(p / n)
            } else {
                Err(ScaleError::ZeroNorm)
            }
        })
        .collect()
}

/// Three nearest visual directions to `query`, nearest first, ties by index.
pub fn nearest3_on_sphere(visual_dirs: &KdTree, query: &Vec3) -> Result<[u32; 3], ScaleError> {
    if visual_dirs.len() < 3 {
        return Err(ScaleError::TooFewPoints(visual_dirs.len()));
    }
    let nn = visual_dirs.nearest(query, 3);
    Ok([nn[0].index, nn[1].index, nn[2].index])
}

/// Scale sample from one radar point and three visual points, all in the
/// camera frame.
pub fn plane_scale(
    p_radar: &Vec3,
    p_a: &Vec3,
    p_b: &Vec3,
    p_c: &Vec3,
    cfg: &ScaleConfig,
) -> Result<f64, ScaleError> {
    let ab = p_a - p_b;
    let bc = p_b - p_c;
    let n = ab.cross(&bc);
    let denom_len = ab.norm() * bc.norm();
    if !(denom_len > 0.0) || n.norm() / denom_len < 1e-6 {
        return Err(ScaleError::DegeneratePlane);
    }
    let na = n.dot(p_a);
    let cos = na.abs() / (n.norm() * p_a.norm());
    if !(cos >= cfg.min_normal_dot) {
        return Err(ScaleError::UnstableDenominator(cos));
    }
    let s = n.dot(p_radar) / na;
    if !(s > 0.0) || !s.is_finite() {
        return Err(ScaleError::NonPositiveScale(s));
    }
    Ok(s)
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    2.0 * ((a - b).norm() / 2.0).min(1.0).asin()
}

/// Back-projected visual points at stride-subsampled valid pixels.
pub fn visual_points(depth: &DepthImage, cam: &CameraModel, stride: u32) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for row in (0..depth.height()).step_by(stride as usize) {
        for col in (0..depth.width()).step_by(stride as usize) {
            let d = depth.get(col, row);
            if d > 0.0 {
                if let Ok(p) = cam.back_project(col as f64, row as f64, d) {
                    pts.push(p);
                }
            }
        }
    }
    pts
}

/// Full-resolution pixels around `(u, v)` lie on the plane through `p_a` with
/// unit normal `n`.
fn taps_coplanar(
    depth: &DepthImage,
    cam: &CameraModel,
    u: f64,
    v: f64,
    n: &Vec3,
    p_a: &Vec3,
    tol: f64,
) -> bool {
    let c0 = u.floor() as i64;
    let r0 = v.floor() as i64;
    for (c, r) in [(c0, r0), (c0 + 1, r0), (c0, r0 + 1), (c0 + 1, r0 + 1)] {
        let Some(d) = depth.valid_at(c, r) else {
            return false;
        };
        let q = match cam.back_project(c as f64, r as f64, d) {
            Ok(q) => q,
            Err(_) => return false,
        };
        if n.dot(&(q - p_a)).abs() > tol * q.norm() {
            return false;
        }
    }
    true
}

/// Per-radar-point scale samples for one frame.
pub fn collect_scale_samples(
    depth: &DepthImage,
    cam: &CameraModel,
    frame: &RadarFrame,
    dyn_labels: &[bool],
    cfg: &ScaleConfig,
) -> Result<ScaleSamples, ScaleError> {
    cfg.validate()?;
    if depth.scale_state != ScaleState::Relative {
        return Err(ScaleError::NotRelative);
    }
    if dyn_labels.len() != frame.points.len() {
        return Err(ScaleError::LabelMismatch {
            labels: dyn_labels.len(),
            points: frame.points.len(),
        });
    }
    let static_idx: Vec<usize> = (0..frame.points.len())
        .filter(|&i| !dyn_labels[i])
        .collect();
    if static_idx.is_empty() {
        return Err(ScaleError::NoStaticPoints);
    }
    let visual = visual_points(depth, cam, cfg.subsample_stride);
    if visual.len() < 3 {
        return Err(ScaleError::TooFewPoints(visual.len()));
    }
    let tree = KdTree::build(sphere_directions(&visual)?);

    let mut out = ScaleSamples {
        samples: Vec::new(),
        static_candidates: static_idx.len(),
        rejections: RejectionCounts::default(),
    };
    for i in static_idx {
        let p_cam = cam.cam_from_ego.apply(&frame.points[i].position);
        let Ok((u, v)) = cam.project(&p_cam) else {
            out.rejections.behind_camera += 1;
            continue;
        };
        let dir = p_cam.normalize();
        let nb = nearest3_on_sphere(&tree, &dir)?;
        let dirs = [
            dir,
            *tree.point(nb[0]),
            *tree.point(nb[1]),
            *tree.point(nb[2]),
        ];
        let mut spread: f64 = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                spread = spread.max(angle_between(&dirs[a], &dirs[b]));
            }
        }
        if spread > cfg.max_spherical_spread {
            out.rejections.spread += 1;
            continue;
        }
        let [pa, pb, pc] = nb.map(|k| visual[k as usize]);
        let zs = [pa.z, pb.z, pc.z];
        let zmax = zs.iter().cloned().fold(f64::MIN, f64::max);
        let zmin = zs.iter().cloned().fold(f64::MAX, f64::min);
        if zmax / zmin > cfg.max_depth_ratio {
            out.rejections.depth_ratio += 1;
            continue;
        }
        let scale = match plane_scale(&p_cam, &pa, &pb, &pc, cfg) {
            Ok(s) => s,
            Err(_) => {
                out.rejections.plane += 1;
                continue;
            }
        };
        let n = (pa - pb).cross(&(pb - pc)).normalize();
        if !taps_coplanar(depth, cam, u, v, &n, &pa, cfg.coplanarity_tol) {
            out.rejections.coplanarity += 1;
            continue;
        }
        out.samples.push(ScaleSample {
            radar_index: i as u32,
            scale,
            neighbor_indices: nb,
        });
    }
    Ok(out)
}

/// Histogram vote: the fullest of `hist_bins` uniform bins over
/// `[hist_min, hist_max]` (ties to the lower bin), refined to the median of
/// the samples in that bin and its two neighbours.
pub fn vote_scale(values: &[f64], cfg: &ScaleConfig) -> Result<f64, ScaleError> {
    cfg.validate()?;
    let bins = cfg.hist_bins as usize;
    let width = (cfg.hist_max - cfg.hist_min) / bins as f64;
    let bin_of = |s: f64| (((s - cfg.hist_min) / width).floor() as usize).min(bins - 1);
    let in_range: Vec<f64> = values
        .iter()
        .copied()
        .filter(|s| *s >= cfg.hist_min && *s <= cfg.hist_max)
        .collect();
    if in_range.is_empty() {
        return Err(ScaleError::NoValidSamples);
    }
    let mut counts = vec![0usize; bins];
    for &s in &in_range {
        counts[bin_of(s)] += 1;
    }
    let mode = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let lo = mode.saturating_sub(1);
    let hi = (mode + 1).min(bins - 1);
    let mut near: Vec<f64> = in_range
        .into_iter()
        .filter(|s| (lo..=hi).contains(&bin_of(*s)))
        .collect();
    Ok(median(&mut near))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of per-frame scales, for one scale per sequence.
pub fn aggregate_sequence_scale(per_frame: &[f64]) -> Option<f64> {
    if per_frame.is_empty() {
        return None;
    }
    let mut v = per_frame.to_vec();
    Some(median(&mut v))
}

pub fn apply_scale(depth: &DepthImage, s: f64) -> Result<DepthImage, ScaleError> {
    if depth.scale_state != ScaleState::Relative {
        return Err(ScaleError::NotRelative);
    }
    depth
        .apply_scale(s)
        .map_err(|_| ScaleError::NonPositiveScale(s))
}

/// Per-frame scale report, as written by the `scale` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: f64,
    pub sample_count: usize,
    pub static_candidates: usize,
    pub acceptance_rate: f64,
    pub rejections: RejectionCounts,
}

/// Collects samples, votes, and reports.
pub fn recover_scale(
    depth: &DepthImage,
    cam: &CameraModel,
    frame: &RadarFrame,
    dyn_labels: &[bool],
    cfg: &ScaleConfig,
) -> Result<ScaleReport, ScaleError> {
    let set = collect_scale_samples(depth, cam, frame, dyn_labels, cfg)?;
    let scale = vote_scale(&set.values(), cfg)?;
    Ok(ScaleReport {
        scale,
        sample_count: set.samples.len(),
        static_candidates: set.static_candidates,
        acceptance_rate: set.acceptance_rate(),
        rejections: set.rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::radar::RadarPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn sphere_directions_examples() {
        let d = sphere_directions(&[Vec3::new(0.0, 0.0, 2.0), Vec3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d[0], Vec3::new(0.0, 0.0, 1.0));
        assert!((d[1] - Vec3::new(0.6, 0.8, 0.0)).norm() < 1e-15);
        assert_eq!(
            sphere_directions(&[Vec3::zeros()]),
            Err(ScaleError::ZeroNorm)
        );
    }

    proptest! {
        #[test]
        fn sphere_directions_unit(x in -1e3..1e3f64, y in -1e3..1e3f64, z in 1e-3..1e3f64) {
            let d = sphere_directions(&[Vec3::new(x, y, z)]).unwrap();
            prop_assert!((d[0].norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn plane_scale_is_inverse_in_visual_scaling(k in 0.1..10.0f64, seed in any::<u64>()) {
            let (pr, pa, pb, pc) = random_plane_case(seed);
            let cfg = ScaleConfig::default();
            if let Ok(s) = plane_scale(&pr, &pa, &pb, &pc, &cfg) {
                let sk = plane_scale(&pr, &(pa * k), &(pb * k), &(pc * k), &cfg).unwrap();
                prop_assert!((sk - s / k).abs() <= 1e-9 * s.abs().max(1.0));
            }
        }

        #[test]
        fn plane_scale_anchor_invariant(seed in any::<u64>()) {
            let (pr, pa, pb, pc) = random_plane_case(seed);
            let cfg = ScaleConfig { min_normal_dot: 0.0, ..Default::default() };
            let s1 = plane_scale(&pr, &pa, &pb, &pc, &cfg).unwrap();
            let s2 = plane_scale(&pr, &pb, &pc, &pa, &cfg).unwrap();
            let s3 = plane_scale(&pr, &pc, &pa, &pb, &cfg).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-9 * s1);
            prop_assert!((s1 - s3).abs() <= 1e-9 * s1);
        }

        #[test]
        fn vote_is_permutation_invariant(mut v in prop::collection::vec(0.05..50.0f64, 1..200), seed in any::<u64>()) {
            let cfg = ScaleConfig::default();
            let a = vote_scale(&v, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(&mut v[..], &mut rng);
            prop_assert_eq!(a.to_bits(), vote_scale(&v, &cfg).unwrap().to_bits());
        }
    }

    /// Metric plane through three points, visual points at metric/scale, and a
    /// radar point on the metric plane.
    fn random_plane_case(seed: u64) -> (Vec3, Vec3, Vec3, Vec3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rng.random_range(0.5..5.0);
        let normal = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..1.0),
        )
        .normalize();
        let offset = rng.random_range(5.0..30.0);
        let e1 = normal.cross(&Vec3::x()).normalize();
        let e2 = normal.cross(&e1);
        let on_plane = |a: f64, b: f64| normal * offset + e1 * a + e2 * b;
        let ma = on_plane(0.0, 0.0);
        let mb = on_plane(1.0, 0.2);
        let mc = on_plane(0.3, 1.1);
        let pr = on_plane(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        (pr, ma / s, mb / s, mc / s)
    }

    #[test]
    fn plane_scale_recovers_construction_scale() {
        let n = Vec3::new(0.1, -0.2, 1.0);
        let e1 = n.cross(&Vec3::x()).normalize();
        let e2 = n.cross(&e1).normalize();
        let on = |a: f64, b: f64| n.normalize() * 12.0 + e1 * a + e2 * b;
        let (ma, mb, mc) = (on(0.0, 0.0), on(1.0, 0.0), on(0.0, 1.0));
        let pr = on(0.4, -0.7);
        let s = plane_scale(
            &pr,
            &(ma / 2.0),
            &(mb / 2.0),
            &(mc / 2.0),
            &ScaleConfig::default(),
        )
        .unwrap();
        assert!((s - 2.0).abs() <= 1e-12, "{s}");
    }

    #[test]
    fn plane_scale_errors() {
        let cfg = ScaleConfig::default();
        let pr = Vec3::new(0.0, 0.0, 5.0);
        assert_eq!(
            plane_scale(
                &pr,
                &Vec3::new(0.0, 0.0, 1.0),
                &Vec3::new(0.0, 0.0, 2.0),
                &Vec3::new(0.0, 0.0, 3.0),
                &cfg
            ),
            Err(ScaleError::DegeneratePlane)
        );
        // plane x = 0 contains the origin: n · p_a = 0
        assert!(matches!(
            plane_scale(
                &Vec3::new(1.0, 0.0, 5.0),
                &Vec3::new(0.0, 0.0, 1.0),
                &Vec3::new(0.0, 1.0, 2.0),
                &Vec3::new(0.0, -1.0, 3.0),
                &cfg
            ),
            Err(ScaleError::UnstableDenominator(_))
        ));
        // radar point on the far side of the camera
        assert!(matches!(
            plane_scale(
                &Vec3::new(0.0, 0.0, -5.0),
                &Vec3::new(0.0, 0.0, 1.0),
                &Vec3::new(1.0, 0.0, 1.0),
                &Vec3::new(0.0, 1.0, 1.0),
                &cfg
            ),
            Err(ScaleError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn nearest3_examples() {
        let dirs = sphere_directions(&[
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.1, 0.0, 1.0),
            Vec3::new(0.0, 0.2, 1.0),
        ])
        .unwrap();
        let tree = KdTree::build(dirs.clone());
        let nn = nearest3_on_sphere(&tree, &dirs[1]).unwrap();
        assert_eq!(nn[0], 1);
        let mut all = nn.to_vec();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        let two = KdTree::build(dirs[..2].to_vec());
        assert_eq!(
            nearest3_on_sphere(&two, &dirs[0]),
            Err(ScaleError::TooFewPoints(2))
        );
    }

    #[test]
    fn nearest3_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut gauss = || {
            Vec3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            )
        };
        let pts: Vec<Vec3> = (0..10_000).map(|_| gauss()).collect();
        let dirs = sphere_directions(&pts).unwrap();
        let tree = KdTree::build(dirs.clone());
        for _ in 0..500 {
            let q = gauss().normalize();
            let mut scan: Vec<(f64, u32)> = dirs
                .iter()
                .enumerate()
                .map(|(i, d)| ((d - q).norm_squared(), i as u32))
                .collect();
            scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect = [scan[0].1, scan[1].1, scan[2].1];
            assert_eq!(nearest3_on_sphere(&tree, &q).unwrap(), expect);
        }
    }

    #[test]
    fn vote_examples() {
        let cfg = ScaleConfig::default();
        assert_eq!(vote_scale(&[1.7; 20], &cfg).unwrap(), 1.7);
        assert_eq!(
            vote_scale(&[0.01, 60.0], &cfg),
            Err(ScaleError::NoValidSamples)
        );
        assert_eq!(vote_scale(&[], &cfg), Err(ScaleError::NoValidSamples));
    }

    #[test]
    fn vote_is_robust_to_outliers() {
        let cfg = ScaleConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inl = Normal::new(2.0, 0.01).unwrap();
            let v: Vec<f64> = (0..500)
                .map(|i| {
                    if i % 5 == 0 {
                        rng.random_range(0.1..10.0)
                    } else {
                        inl.sample(&mut rng)
                    }
                })
                .collect();
            let s = vote_scale(&v, &cfg).unwrap();
            assert!((s - 2.0).abs() <= 0.02, "seed {seed}: {s}");
        }
    }

    #[test]
    fn vote_tie_prefers_lower_bin() {
        let cfg = ScaleConfig {
            hist_min: 0.0,
            hist_max: 10.0,
            hist_bins: 10,
            ..Default::default()
        };
        // bins 2 and 7 tie; bin 2 wins, neighbours 1..=3 hold only its samples
        assert_eq!(vote_scale(&[2.5, 2.5, 7.5, 7.5], &cfg).unwrap(), 2.5);
    }

    #[test]
    fn apply_scale_requires_relative() {
        let d = DepthImage::new(2, 1, vec![1.0, 0.0], ScaleState::Relative).unwrap();
        let m = apply_scale(&d, 2.0).unwrap();
        assert_eq!(m.data(), &[2.0, 0.0]);
        assert_eq!(apply_scale(&m, 2.0), Err(ScaleError::NotRelative));
        assert_eq!(apply_scale(&d, 0.0), Err(ScaleError::NonPositiveScale(0.0)));
    }

    /// Fronto-parallel wall at z = 10 (metric), relative depth = metric / 3.
    fn wall_case(radar: Vec<(Vec3, bool)>) -> (DepthImage, CameraModel, RadarFrame, Vec<bool>) {
        let cam =
            CameraModel::new(300.0, 300.0, 32.0, 32.0, 64, 64, RigidTransform::identity()).unwrap();
        let depth = DepthImage::filled(64, 64, 10.0 / 3.0, ScaleState::Relative);
        let labels = radar.iter().map(|r| r.1).collect();
        let frame = RadarFrame::new(
            0.0,
            RigidTransform::identity(),
            radar
                .into_iter()
                .map(|(p, _)| RadarPoint::new(p, 0.0).unwrap())
                .collect(),
        );
        (depth, cam, frame, labels)
    }

    #[test]
    fn wall_scale_is_exact() {
        let (depth, cam, frame, labels) = wall_case(vec![
            (Vec3::new(0.1, 0.05, 10.0), false),
            (Vec3::new(-0.3, 0.2, 10.0), false),
            (Vec3::new(0.0, 0.0, 10.0), true),
        ]);
        let set =
            collect_scale_samples(&depth, &cam, &frame, &labels, &ScaleConfig::default()).unwrap();
        assert_eq!(set.static_candidates, 2);
        assert_eq!(set.samples.len(), 2);
        for s in &set.samples {
            assert!((s.scale - 3.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn all_dynamic_is_an_error() {
        let (depth, cam, frame, labels) = wall_case(vec![(Vec3::new(0.0, 0.0, 10.0), true)]);
        assert_eq!(
            collect_scale_samples(&depth, &cam, &frame, &labels, &ScaleConfig::default()),
            Err(ScaleError::NoStaticPoints)
        );
    }

    #[test]
    fn depth_discontinuity_rejected() {
        // Left half of the image at relative depth 1, right half at 2; the
        // radar point looks straight at the seam.
        let cam =
            CameraModel::new(300.0, 300.0, 32.0, 32.0, 64, 64, RigidTransform::identity()).unwrap();
        let data: Vec<f64> = (0..64 * 64)
            .map(|i| if i % 64 < 33 { 1.0 } else { 2.0 })
            .collect();
        let depth = DepthImage::new(64, 64, data, ScaleState::Relative).unwrap();
        let u = 34.0;
        let z = 10.0;
        let frame = RadarFrame::new(
            0.0,
            RigidTransform::identity(),
            vec![RadarPoint::new(Vec3::new((u - 32.0) * z / 300.0, 0.0, z), 0.0).unwrap()],
        );
        let set =
            collect_scale_samples(&depth, &cam, &frame, &[false], &ScaleConfig::default()).unwrap();
        assert!(set.samples.is_empty());
        assert_eq!(set.rejections.depth_ratio, 1);
    }

    #[test]
    fn metric_depth_rejected() {
        let (depth, cam, frame, labels) = wall_case(vec![(Vec3::new(0.0, 0.0, 10.0), false)]);
        let metric = depth.apply_scale(3.0).unwrap();
        assert_eq!(
            collect_scale_samples(&metric, &cam, &frame, &labels, &ScaleConfig::default()),
            Err(ScaleError::NotRelative)
        );
    }
}
