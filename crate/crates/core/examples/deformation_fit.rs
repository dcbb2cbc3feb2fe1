// SPDX-License-Identifier: Apache-2.0

//! Fits an invertible deformation field to lifted scene flow on a rigidly
//! translating object, with and without the radial-velocity term.

use radarflow::deformation::{
    fit, warp_samples, CouplingField, DeformationField, FieldArchitecture, Normalization,
    TimeRange, TrainConfig,
};
use radarflow::flow_lift::{associate_radial_velocity, drop_implausible, lift_scene_flow};
use radarflow::simulator::{simulate, true_target, SceneConfig};
use radarflow::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scene = SceneConfig::rigid_translation(Vec3::new(5.0, 1.0, 0.0));
    scene.duration = 0.5;
    let sim = simulate(&scene)?;
    let cam = &sim.config.camera;
    let mut samples = Vec::new();
    for w in sim.frames.windows(2) {
        let (fi, fj) = (&w[0], &w[1]);
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
            4,
        )?;
        // the object moves at ~5 m/s; longer displacements straddle occlusions
        let lifted = drop_implausible(lifted, 10.0);
        samples.extend(associate_radial_velocity(
            &lifted,
            &fi.radar,
            &fi.dyn_labels_gt,
            &fi.ego_pose,
            &fi.ego_velocity,
            3.0,
        )?);
    }
    let t0 = samples.iter().map(|s| s.t_i).fold(f64::INFINITY, f64::min);
    let t1 = samples
        .iter()
        .map(|s| s.t_j)
        .fold(f64::NEG_INFINITY, f64::max);
    let init = CouplingField::new(
        FieldArchitecture::default(),
        Normalization::from_samples(&samples),
        TimeRange::new(t0, t1),
        7,
    );

    for lambda_rad in [0.0, 0.5] {
        let cfg = TrainConfig {
            iterations: 600,
            lambda_rad,
            ..Default::default()
        };
        let result = fit(&init, &samples, &cfg)?;
        let warped = warp_samples(&result.field, &samples);
        let epe: f64 = samples
            .iter()
            .zip(&warped)
            .map(|(s, y)| true_target(&sim, s).map(|t| (y - t).norm()))
            .sum::<Option<f64>>()
            .ok_or("sample outside the simulated frames")?
            / samples.len() as f64;
        let x = samples[0].x_ti;
        let back = result.field.inverse(&result.field.forward(&x, t0), t0);
        println!(
            "lambda_rad {lambda_rad}: {} samples, L_flow {:.4}, L_rad {:.4}, warp EPE {:.3} m, round trip {:.1e} m",
            samples.len(),
            result.final_loss_flow,
            result.final_loss_rad,
            epe,
            (back - x).norm()
        );
    }
    Ok(())
}
