// SPDX-License-Identifier: Apache-2.0

//! Lifts optical flow on dynamic pixels to 3-d scene flow and attaches the
//! nearest dynamic radar return's radial velocity.

use radarflow::flow_lift::{
    associate_radial_velocity, drop_implausible, lift_scene_flow, DEFAULT_MAX_SPEED,
};
use radarflow::simulator::{simulate, true_target, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        duration: 1.0,
        ..Default::default()
    };
    let sim = simulate(&scene)?;
    let cam = &sim.config.camera;
    let (fi, fj) = (&sim.frames[3], &sim.frames[4]);
    let lifted = lift_scene_flow(
        fi.flow_to_next.as_ref().ok_or("no flow")?,
        &fi.depth_metric,
        &fj.depth_metric,
        &fi.mask_gt,
        cam,
        &fi.ego_pose,
        &fj.ego_pose,
        fi.timestamp,
        fj.timestamp,
        2,
    )?;
    let lifted = drop_implausible(lifted, DEFAULT_MAX_SPEED);
    let samples = associate_radial_velocity(
        &lifted,
        &fi.radar,
        &fi.dyn_labels_gt,
        &fi.ego_pose,
        &fi.ego_velocity,
        3.0,
    )?;

    let with_vr = samples
        .iter()
        .filter(|s| s.radial_velocity.is_some())
        .count();
    let mut errors: Vec<f64> = samples
        .iter()
        .map(|s| true_target(&sim, s).map(|t| (s.x_tj - t).norm()))
        .collect::<Option<_>>()
        .ok_or("sample outside the simulated frames")?;
    errors.sort_by(f64::total_cmp);
    println!(
        "{} samples, {with_vr} with a radial velocity",
        samples.len()
    );
    if !errors.is_empty() {
        println!(
            "endpoint error: median {:.2e} m, 95th percentile {:.2e} m",
            errors[errors.len() / 2],
            errors[errors.len() * 95 / 100]
        );
    }
    Ok(())
}
