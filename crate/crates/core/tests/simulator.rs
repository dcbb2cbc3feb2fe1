// SPDX-License-Identifier: Apache-2.0

use radarflow::flow_lift::{interpolate_depth, lift_scene_flow};
use radarflow::simulator::raycast::{cast, Aabb, SKY};
use radarflow::simulator::{
    evaluate, load_scene, simulate, surface_at, write_scene, EgoSegment, FrameBundle, Predictions,
    SceneConfig, SceneFiles, Simulation,
};
use radarflow::Vec3;

fn short(mut cfg: SceneConfig, seconds: f64) -> SceneConfig {
    cfg.duration = seconds;
    cfg
}

fn stationary_ego(cfg: &mut SceneConfig) {
    cfg.ego.segments = vec![EgoSegment {
        duration: 1.0,
        speed: 0.0,
        yaw_rate: 0.0,
    }];
}

fn world_boxes(cfg: &SceneConfig, t: f64) -> Vec<Aabb> {
    cfg.static_boxes
        .iter()
        .chain(&cfg.dynamic_boxes)
        .map(|b| Aabb::from_center(b.center_at(t), b.size))
        .collect()
}

/// Surface ids of the four pixels around `(u, v)`, if they all agree.
fn common_surface(f: &FrameBundle, width: u32, u: f64, v: f64) -> Option<u32> {
    let (c, r) = (u.floor() as u32, v.floor() as u32);
    let s = surface_at(f, width, c, r);
    let others = [(c + 1, r), (c, r + 1), (c + 1, r + 1)];
    others
        .iter()
        .all(|&(cc, rr)| surface_at(f, width, cc.min(width - 1), rr) == s)
        .then_some(s)
        .filter(|&s| s != SKY)
}

#[test]
fn simulation_is_deterministic() {
    let cfg = short(SceneConfig::default(), 1.0);
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool.install(|| simulate(&cfg).unwrap());
    assert_eq!(a, c);
}

#[test]
fn default_scene_shape() {
    let sim = simulate(&SceneConfig::default()).unwrap();
    assert_eq!(sim.frames.len(), 50);
    let cam = &sim.config.camera;
    assert_eq!((cam.width, cam.height), (320, 180));
    for f in &sim.frames {
        assert_eq!(f.radar.len(), 300);
        assert_eq!(f.dyn_labels_gt.len(), 300);
        assert_eq!(f.depth_metric.width(), cam.width);
        assert_eq!(f.mask_gt.height(), cam.height);
    }
    assert!(sim.frames.last().unwrap().flow_to_next.is_none());
    assert!(sim.frames[..49].iter().all(|f| f.flow_to_next.is_some()));
    let dynamic: usize = sim
        .frames
        .iter()
        .map(|f| f.dyn_labels_gt.iter().filter(|d| **d).count())
        .sum();
    let frac = dynamic as f64 / 15000.0;
    assert!((0.2..0.45).contains(&frac), "dynamic fraction {frac}");
}

#[test]
fn static_scene_without_ego_motion_has_zero_radial_velocity() {
    let mut cfg = short(SceneConfig::default(), 0.5).noise_free();
    stationary_ego(&mut cfg);
    cfg.dynamic_boxes.clear();
    let sim = simulate(&cfg).unwrap();
    for f in &sim.frames {
        assert!(!f.radar.is_empty());
        assert!(f.radar.points.iter().all(|p| p.radial_velocity == 0.0));
        assert!(f.dyn_labels_gt.iter().all(|d| !d));
        assert_eq!(f.mask_gt.count(), 0);
    }
}

#[test]
fn head_on_approach_is_negative() {
    let mut cfg = short(SceneConfig::default(), 0.3).noise_free();
    stationary_ego(&mut cfg);
    cfg.static_boxes.clear();
    cfg.dynamic_boxes = vec![radarflow::simulator::BoxSpec::on_ground(
        25.0,
        0.0,
        Vec3::new(4.5, 1.9, 1.6),
        Vec3::new(-5.0, 0.0, 0.0),
    )];
    let sim = simulate(&cfg).unwrap();
    let mut closest = 0.0f64;
    for f in &sim.frames {
        for (p, dynamic) in f.radar.points.iter().zip(&f.dyn_labels_gt) {
            if *dynamic {
                let d = p.direction();
                assert!((p.radial_velocity + 5.0 * d.x).abs() < 1e-12);
                closest = closest.min(p.radial_velocity);
            }
        }
    }
    assert!((-5.0..-4.99).contains(&closest), "{closest}");
}

#[test]
fn static_residual_vanishes_without_noise() {
    let sim = simulate(&short(SceneConfig::default(), 1.0).noise_free()).unwrap();
    for f in &sim.frames {
        for (p, dynamic) in f.radar.points.iter().zip(&f.dyn_labels_gt) {
            if !*dynamic {
                assert!(p.static_residual(&f.ego_velocity).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn relative_depth_times_scale_is_metric() {
    let sim = simulate(&short(SceneConfig::default(), 0.5)).unwrap();
    let s = sim.config.relative_depth_scale;
    for f in &sim.frames {
        for (r, m) in f.depth_relative.data().iter().zip(f.depth_metric.data()) {
            assert_eq!(r * s, *m);
        }
    }
}

#[test]
fn depth_at_radar_projection_matches_camera_z() {
    let sim = simulate(&short(SceneConfig::default(), 1.0).noise_free()).unwrap();
    let cam = &sim.config.camera;
    let mut checked = 0;
    for f in &sim.frames {
        let boxes = world_boxes(&sim.config, f.timestamp);
        let world_from_cam = f.ego_pose.compose(&cam.ego_from_cam());
        for p in &f.radar.points {
            let pc = cam.cam_from_ego.apply(&p.position);
            let Ok((u, v)) = cam.project(&pc) else {
                continue;
            };
            if !cam.contains(u, v)
                || !cam.contains(u + 1.0, v + 1.0)
                || common_surface(f, cam.width, u, v).is_none()
            {
                continue;
            }
            // skip returns the camera cannot see from its own viewpoint
            let o = world_from_cam.translation;
            let target = f.ego_pose.apply(&p.position);
            match cast(&o, &(target - o), &boxes) {
                Some(hit) if hit.distance >= 1.0 - 1e-9 => {}
                _ => continue,
            }
            let d = interpolate_depth(&f.depth_metric, u, v).unwrap();
            assert!((d - pc.z).abs() <= 1e-6, "depth {d} vs z {}", pc.z);
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} radar points checked");
}

fn lifted_against_truth(sim: &Simulation) -> (usize, f64) {
    let cam = &sim.config.camera;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for w in sim.frames.windows(2) {
        let (fi, fj) = (&w[0], &w[1]);
        let samples = lift_scene_flow(
            fi.flow_to_next.as_ref().unwrap(),
            &fi.depth_metric,
            &fj.depth_metric,
            &fi.mask_gt,
            cam,
            &fi.ego_pose,
            &fj.ego_pose,
            fi.timestamp,
            fj.timestamp,
            2,
        )
        .unwrap();
        for s in &samples {
            let [col, row] = s.source_pixel;
            let src = surface_at(fi, cam.width, col, row);
            let [du, dv] = fi.flow_to_next.as_ref().unwrap().get(col, row);
            let (u, v) = (col as f64 + du, row as f64 + dv);
            if !cam.contains(u, v) || !cam.contains(u + 1.0, v + 1.0) {
                continue;
            }
            if common_surface(fj, cam.width, u, v) != Some(src) {
                continue;
            }
            let truth = radarflow::simulator::true_target(sim, s).unwrap();
            worst = worst.max((s.x_tj - truth).norm());
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn lifting_ground_truth_reproduces_motion() {
    let sim = simulate(&short(SceneConfig::default(), 1.0)).unwrap();
    let (checked, worst) = lifted_against_truth(&sim);
    assert!(checked > 1000, "only {checked} samples checked");
    assert!(worst <= 1e-6, "worst endpoint error {worst}");
}

fn ground_truth_predictions(sim: &Simulation) -> Predictions {
    Predictions {
        ego_velocities: sim.frames.iter().map(|f| f.ego_velocity).collect(),
        dyn_labels: sim.frames.iter().map(|f| f.dyn_labels_gt.clone()).collect(),
        scales: vec![sim.config.relative_depth_scale; sim.frames.len()],
        ..Default::default()
    }
}

#[test]
fn evaluate_ground_truth_scores_perfectly() {
    let sim = simulate(&short(SceneConfig::default(), 1.0)).unwrap();
    let report = evaluate(&sim, &ground_truth_predictions(&sim)).unwrap();
    assert_eq!(report.ego_velocity_rmse, 0.0);
    assert_eq!(report.label_f1, 1.0);
    assert_eq!(report.label_precision, 1.0);
    assert_eq!(report.scale_relative_error, Some(0.0));
    assert_eq!(report.scene_flow_epe, None);
}

#[test]
fn evaluate_all_static_labels_has_zero_recall() {
    let sim = simulate(&short(SceneConfig::default(), 0.5)).unwrap();
    let mut pred = ground_truth_predictions(&sim);
    for labels in &mut pred.dyn_labels {
        labels.iter_mut().for_each(|l| *l = false);
    }
    let report = evaluate(&sim, &pred).unwrap();
    assert_eq!(report.label_recall, 0.0);
    assert_eq!(report.label_f1, 0.0);
}

#[test]
fn evaluate_rejects_frame_count_mismatch() {
    let sim = simulate(&short(SceneConfig::default(), 0.5)).unwrap();
    let mut pred = ground_truth_predictions(&sim);
    pred.ego_velocities.pop();
    assert!(evaluate(&sim, &pred).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = SceneConfig {
        frame_rate: 0.0,
        ..Default::default()
    };
    assert!(simulate(&cfg).is_err());
    let mut cfg = SceneConfig::default();
    cfg.radar.velocity_noise = -1.0;
    assert!(simulate(&cfg).is_err());
    let mut cfg = SceneConfig::default();
    cfg.static_boxes[0].size.x = 0.0;
    assert!(simulate(&cfg).is_err());
}

#[test]
fn scene_directory_round_trip() {
    let sim = simulate(&short(SceneConfig::default(), 0.3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &sim).unwrap();
    let files = SceneFiles::new(dir.path());
    let depth = radarflow::io::read_depth(files.depth(1)).unwrap();
    let f = &sim.frames[1];
    for (a, b) in depth.data().iter().zip(f.depth_metric.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(
        radarflow::io::read_mask(files.mask(2)).unwrap(),
        f_mask(&sim, 2)
    );
    assert!(!files.flow(2).exists());
    let radar = radarflow::io::read_radar(files.radar()).unwrap();
    assert_eq!(radar, sim.radar_frames());
    assert_eq!(load_scene(dir.path()).unwrap(), sim);
}

fn f_mask(sim: &Simulation, k: usize) -> radarflow::DynamicMask {
    sim.frames[k].mask_gt.clone()
}
