// SPDX-License-Identifier: Apache-2.0

//! Ego-velocity estimation and dynamic/static labelling from radar Doppler.

use radarflow::ego_motion::{
    classify_dynamic, estimate_ego_velocity, RansacConfig, DEFAULT_TAU_DYN,
};
use radarflow::simulator::{simulate, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = simulate(&SceneConfig::default())?;
    let cfg = RansacConfig::default();
    let mut sq = 0.0;
    for f in &sim.frames {
        let est = estimate_ego_velocity(&f.radar, &cfg)?;
        let labels = classify_dynamic(&f.radar, &est, DEFAULT_TAU_DYN);
        let err = (est.velocity - f.ego_velocity).norm();
        sq += err * err;
        if f.index % 10 == 0 {
            let agree = labels
                .iter()
                .zip(&f.dyn_labels_gt)
                .filter(|(a, b)| a == b)
                .count();
            println!(
                "frame {:2}: v = ({:6.2}, {:5.2}, {:5.2}) m/s, error {err:.3}, {} inliers, labels {agree}/{} correct",
                f.index,
                est.velocity.x,
                est.velocity.y,
                est.velocity.z,
                est.inlier_indices.len(),
                labels.len()
            );
        }
    }
    println!(
        "velocity RMSE {:.4} m/s",
        (sq / sim.frames.len() as f64).sqrt()
    );
    Ok(())
}
