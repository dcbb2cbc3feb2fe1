// SPDX-License-Identifier: Apache-2.0

//! Metric scale of a relative depth map from static radar returns.

use radarflow::ego_motion::{
    classify_dynamic, estimate_ego_velocity, RansacConfig, DEFAULT_TAU_DYN,
};
use radarflow::scale::{aggregate_sequence_scale, apply_scale, recover_scale, ScaleConfig};
use radarflow::simulator::{simulate, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = simulate(&SceneConfig::default())?;
    let cam = &sim.config.camera;
    let truth = sim.config.relative_depth_scale;
    let cfg = ScaleConfig::default();
    let mut scales = Vec::new();
    for f in &sim.frames {
        let est = estimate_ego_velocity(&f.radar, &RansacConfig::default())?;
        let labels = classify_dynamic(&f.radar, &est, DEFAULT_TAU_DYN);
        let report = recover_scale(&f.depth_relative, cam, &f.radar, &labels, &cfg)?;
        if f.index % 10 == 0 {
            println!(
                "frame {:2}: s = {:.4} from {} samples ({:.0}% accepted)",
                f.index,
                report.scale,
                report.sample_count,
                100.0 * report.acceptance_rate
            );
        }
        scales.push(report.scale);
    }
    let s = aggregate_sequence_scale(&scales).ok_or("no frame produced a scale")?;
    println!(
        "sequence scale {s:.4}, true {truth}, error {:.3}%",
        100.0 * (s - truth).abs() / truth
    );

    let metric = apply_scale(&sim.frames[0].depth_relative, s)?;
    let (c, r) = (cam.width / 2, cam.height / 2);
    println!(
        "centre pixel depth {:.2} m (true {:.2} m)",
        metric.get(c, r),
        sim.frames[0].depth_metric.get(c, r)
    );
    Ok(())
}
