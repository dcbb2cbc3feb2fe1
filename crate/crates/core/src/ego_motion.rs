// SPDX-License-Identifier: Apache-2.0

//! Single-frame ego-velocity estimation from radar radial velocities.
//!
//! Static returns obey `v_r,i = -d_i · v_ego`, one linear equation per point.
//! A RANSAC loop over 3-point minimal samples finds the static consensus,
//! which is then refit by least squares. Hypotheses are drawn serially from a
//! seeded stream and scored in parallel; the winner is picked by
//! `(inlier count desc, hypothesis index asc)`, so the result does not depend
//! on the thread count.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::radar::RadarFrame;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-6;
const MAX_RESAMPLE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EgoMotionError {
    #[error("need at least 3 radar points, got {0}")]
    TooFewPoints(usize),
    #[error("best consensus has {found} inliers, need {required}")]
    NoConsensus { found: usize, required: usize },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: u32,
    /// m/s
    pub inlier_threshold: f64,
    pub min_inliers: u32,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.25,
            min_inliers: 10,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), EgoMotionError> {
        if self.iterations == 0 {
            return Err(EgoMotionError::InvalidConfig(
                "iterations must be >= 1".into(),
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(EgoMotionError::InvalidConfig(
                "inlier_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Default dynamic-classification threshold, m/s.
pub const DEFAULT_TAU_DYN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoMotionEstimate {
    /// Sensor linear velocity in the sensor frame, m/s.
    pub velocity: Vec3,
    pub inlier_indices: Vec<u32>,
    pub rms_residual: f64,
    /// Set when the inlier directions do not span 3-d; unobservable velocity
    /// components are zeroed.
    #[serde(default)]
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares solution of `rows · v = rhs`, zeroing singular
/// directions below `RANK_TOLERANCE`. Returns the solution and numerical rank.
pub fn solve_least_squares(rows: &[Vec3], rhs: &[f64]) -> (Vec3, usize) {
    let a = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return (Vec3::zeros(), 0);
    }
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut x = Vec3::zeros();
    let mut rank = 0;
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s < RANK_TOLERANCE * smax {
            continue;
        }
        rank += 1;
        let coef = u.column(k).dot(&b) / s;
        x += vt.row(k).transpose() * coef;
    }
    (x, rank)
}

fn rank_of(rows: &[Vec3]) -> usize {
    let m: Matrix3<f64> = rows.iter().map(|d| d * d.transpose()).sum();
    // eigenvalues of DᵀD are squared singular values of D
    let ev = m.symmetric_eigenvalues();
    let max = ev.max();
    if !(max > 0.0) {
        return 0;
    }
    ev.iter()
        .filter(|e| e.max(0.0).sqrt() >= RANK_TOLERANCE * max.sqrt())
        .count()
}

fn residual(dir: &Vec3, vr: f64, v: &Vec3) -> f64 {
    vr + dir.dot(v)
}

/// RANSAC ego-velocity estimate for one frame.
pub fn estimate_ego_velocity(
    frame: &RadarFrame,
    cfg: &RansacConfig,
) -> Result<EgoMotionEstimate, EgoMotionError> {
    cfg.validate()?;
    let n = frame.points.len();
    if n < 3 {
        return Err(EgoMotionError::TooFewPoints(n));
    }
    let dirs: Vec<Vec3> = frame.points.iter().map(|p| p.direction()).collect();
    let vrs: Vec<f64> = frame.points.iter().map(|p| p.radial_velocity).collect();
    let frame_rank = rank_of(&dirs);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples: Vec<[usize; 3]> = Vec::with_capacity(cfg.iterations as usize);
    for _ in 0..cfg.iterations {
        for _ in 0..MAX_RESAMPLE {
            let idx = rand::seq::index::sample(&mut rng, n, 3);
            let s = [idx.index(0), idx.index(1), idx.index(2)];
            let rows = [dirs[s[0]], dirs[s[1]], dirs[s[2]]];
            if rank_of(&rows) >= frame_rank {
                samples.push(s);
                break;
            }
        }
    }

    let scored: Vec<(usize, usize)> = samples
        .par_iter()
        .enumerate()
        .map(|(h, s)| {
            let rows = [dirs[s[0]], dirs[s[1]], dirs[s[2]]];
            let rhs = [-vrs[s[0]], -vrs[s[1]], -vrs[s[2]]];
            let (v, _) = solve_least_squares(&rows, &rhs);
            let count = dirs
                .iter()
                .zip(&vrs)
                .filter(|(d, vr)| residual(d, **vr, &v).abs() <= cfg.inlier_threshold)
                .count();
            (h, count)
        })
        .collect();

    let best = scored
        .iter()
        .copied()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
    let Some((best_h, best_count)) = best else {
        return Err(EgoMotionError::NoConsensus {
            found: 0,
            required: cfg.min_inliers as usize,
        });
    };
    if best_count < cfg.min_inliers as usize || best_count < 3 {
        return Err(EgoMotionError::NoConsensus {
            found: best_count,
            required: cfg.min_inliers as usize,
        });
    }

    let s = samples[best_h];
    let (v_hyp, _) = solve_least_squares(
        &[dirs[s[0]], dirs[s[1]], dirs[s[2]]],
        &[-vrs[s[0]], -vrs[s[1]], -vrs[s[2]]],
    );
    let inliers: Vec<u32> = (0..n)
        .filter(|&i| residual(&dirs[i], vrs[i], &v_hyp).abs() <= cfg.inlier_threshold)
        .map(|i| i as u32)
        .collect();

    refit(&dirs, &vrs, inliers)
}

/// Least-squares refit of the velocity on a fixed inlier set.
fn refit(
    dirs: &[Vec3],
    vrs: &[f64],
    inliers: Vec<u32>,
) -> Result<EgoMotionEstimate, EgoMotionError> {
    let rows: Vec<Vec3> = inliers.iter().map(|&i| dirs[i as usize]).collect();
    let rhs: Vec<f64> = inliers.iter().map(|&i| -vrs[i as usize]).collect();
    let (velocity, rank) = solve_least_squares(&rows, &rhs);
    let ss: f64 = inliers
        .iter()
        .map(|&i| residual(&dirs[i as usize], vrs[i as usize], &velocity).powi(2))
        .sum();
    Ok(EgoMotionEstimate {
        velocity,
        rms_residual: (ss / inliers.len() as f64).sqrt(),
        inlier_indices: inliers,
        rank_deficient: rank < 3,
    })
}

/// Ego-compensated radial velocity `v_r,i + d_i · v̂` per point.
pub fn compensated_residuals(frame: &RadarFrame, est: &EgoMotionEstimate) -> Vec<f64> {
    frame
        .points
        .iter()
        .map(|p| p.static_residual(&est.velocity))
        .collect()
}

/// Labels a point dynamic iff its compensated residual exceeds `tau_dyn`
/// (strictly).
pub fn classify_dynamic(frame: &RadarFrame, est: &EgoMotionEstimate, tau_dyn: f64) -> Vec<bool> {
    compensated_residuals(frame, est)
        .into_iter()
        .map(|r| r.abs() > tau_dyn)
        .collect()
}
