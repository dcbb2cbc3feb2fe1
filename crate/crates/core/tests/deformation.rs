// SPDX-License-Identifier: Apache-2.0

use radarflow::deformation::{
    fit, fit_rigid, fit_rigid_pair, loss_flow, loss_rad, CouplingField, DeformError,
    DeformationField, FieldArchitecture, LossWeights, Normalization, TimeRange, TrainConfig,
};
use radarflow::flow_lift::SceneFlowSample;
use radarflow::{RigidTransform, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(x_ti: Vec3, x_tj: Vec3, t_i: f64, t_j: f64) -> SceneFlowSample {
    SceneFlowSample {
        x_ti,
        x_tj,
        t_i,
        t_j,
        radar_origin: Vec3::zeros(),
        radial_velocity: None,
        t_j_to_i: RigidTransform::identity(),
        source_pixel: [0, 0],
    }
}

fn rand_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

fn random_field(seed: u64, std: f64) -> CouplingField {
    CouplingField::random(
        FieldArchitecture::default(),
        Normalization {
            center: Vec3::new(15.0, 1.0, 0.5),
            radius: 8.0,
        },
        TimeRange::new(0.0, 1.0),
        std,
        seed,
    )
}

fn random_samples(n: usize, seed: u64) -> Vec<SceneFlowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = rand_vec(&mut rng, 5.0, 25.0);
            let t_i = rng.random_range(0.0..0.8);
            let mut s = sample(x, x + rand_vec(&mut rng, -1.0, 1.0), t_i, t_i + 0.1);
            s.radar_origin = rand_vec(&mut rng, -1.0, 1.0);
            s.radial_velocity = Some(rng.random_range(-5.0..5.0));
            s.t_j_to_i =
                RigidTransform::from_yaw(rng.random_range(-0.1..0.1), rand_vec(&mut rng, 0.0, 1.0));
            s
        })
        .collect()
}

#[test]
fn zero_field_is_identity() {
    let f = CouplingField::zeros(
        FieldArchitecture::default(),
        Normalization::from_points(&[Vec3::zeros(), Vec3::new(4.0, 2.0, 1.0)]),
        TimeRange::new(0.0, 5.0),
    );
    let x = Vec3::new(3.0, -2.0, 7.5);
    for t in [0.0, 0.3, 1.0] {
        assert_eq!(f.forward(&x, t), x);
        assert_eq!(f.inverse(&x, t), x);
        assert_eq!(f.warp(&x, 0.1, t), x);
    }
}

#[test]
fn fresh_field_is_identity() {
    let f = CouplingField::new(
        FieldArchitecture::default(),
        Normalization::from_points(&[Vec3::zeros(), Vec3::new(4.0, 2.0, 1.0)]),
        TimeRange::new(0.0, 5.0),
        3,
    );
    let x = Vec3::new(3.0, -2.0, 7.5);
    assert_eq!(f.warp(&x, 0.1, 0.9), x);
}

#[test]
fn random_fields_round_trip_and_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for draw in 0..4 {
        let f = random_field(100 + draw, 0.3);
        for _ in 0..500 {
            let x = rand_vec(&mut rng, -50.0, 50.0);
            let t = rng.random_range(0.0..=1.0);
            let y = f.forward(&x, t);
            assert!((f.inverse(&y, t) - x).norm() <= 1e-9);
            assert!((f.warp(&x, t, t) - x).norm() <= 1e-9);
        }
        let far = f.forward(&Vec3::new(1e6, -1e6, 1e6), 0.7);
        assert!(far.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn field_json_round_trip() {
    let f = random_field(5, 0.2);
    let s = serde_json::to_string(&f).unwrap();
    let g: CouplingField = serde_json::from_str(&s).unwrap();
    g.validate().unwrap();
    assert_eq!(f, g);
}

#[test]
fn no_per_timestamp_parameters() {
    let f = random_field(0, 0.1);
    let a = FieldArchitecture::default();
    assert_eq!(f.num_params(), a.num_layers * a.layer_params());
    let axes: Vec<usize> = f.layers.iter().map(|l| l.active_axis).collect();
    assert_eq!(axes, vec![0, 1, 2, 0, 1, 2]);
}

#[test]
fn loss_flow_examples() {
    let f = random_field(9, 0.0);
    let x = Vec3::new(1.0, 2.0, 3.0);
    assert_eq!(loss_flow(&f, &[sample(x, x, 0.0, 0.1)]), 0.0);
    let l = loss_flow(&f, &[sample(x, x + Vec3::new(0.3, 0.0, 0.4), 0.0, 0.1)]);
    assert!((l - 0.25).abs() < 1e-15);
}

#[test]
fn loss_flow_batched_matches_scalar_loop() {
    let f = random_field(11, 0.3);
    let samples = random_samples(100, 2);
    let batched = loss_flow(&f, &samples);
    let scalar: f64 = samples
        .iter()
        .map(|s| (f.warp_seconds(&s.x_ti, s.t_i, s.t_j) - s.x_tj).norm_squared())
        .sum();
    assert!((batched - scalar).abs() <= 1e-12 * scalar.max(1.0));
    let (lf, _) = f.losses(&samples);
    assert!((lf - scalar).abs() <= 1e-12 * scalar.max(1.0));
}

#[test]
fn loss_rad_examples() {
    // zero field: the prediction is x_ti itself, so F = T_j_to_i · x_ti − x_ti
    let f = random_field(9, 0.0);
    let mut s = sample(Vec3::new(10.0, 0.0, 0.0), Vec3::zeros(), 0.0, 0.1);
    s.t_j_to_i = RigidTransform::from_translation(Vec3::new(1.0, 1.0, 0.0));
    s.radial_velocity = Some(4.0);
    assert!((loss_rad(&f, &[s]).unwrap() - 0.6).abs() < 1e-12);
    let mut p = s;
    p.t_j_to_i = RigidTransform::from_translation(Vec3::new(0.0, 2.0, 0.0));
    p.radial_velocity = Some(0.0);
    assert_eq!(loss_rad(&f, &[p]).unwrap(), 0.0);
    let mut missing = p;
    missing.radial_velocity = None;
    assert_eq!(
        loss_rad(&f, &[p, missing]),
        Err(DeformError::MissingRadialVelocity(1))
    );
    let mut close = p;
    close.x_ti = Vec3::new(0.05, 0.0, 0.0);
    assert_eq!(
        loss_rad(&f, &[close]),
        Err(DeformError::SampleAtRadarOrigin(0))
    );
}

#[test]
fn gradient_zero_samples_and_duplication() {
    let f = random_field(4, 0.3);
    let w = LossWeights::default();
    let (_, _, g0) = f.loss_and_gradient(&[], &w);
    assert!(g0.iter().all(|v| *v == 0.0));
    let s = random_samples(128, 5);
    let (_, _, g1) = f.loss_and_gradient(&s, &w);
    let mut d = s.clone();
    d.extend_from_slice(&s);
    let (_, _, g2) = f.loss_and_gradient(&d, &w);
    let scale = g1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = g1
        .iter()
        .zip(&g2)
        .fold(0.0f64, |m, (a, b)| m.max((2.0 * a - b).abs()));
    assert!(worst <= 1e-12 * scale, "{worst} vs {scale}");
}

#[test]
fn gradients_deterministic_across_thread_counts() {
    let f = random_field(4, 0.3);
    let s = random_samples(1000, 6);
    let w = LossWeights::default();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| f.loss_and_gradient(&s, &w));
    let b = four.install(|| f.loss_and_gradient(&s, &w));
    assert_eq!(a, b);
}

#[test]
fn fit_identity_motion_stays_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<_> = (0..200)
        .map(|_| {
            let x = rand_vec(&mut rng, 0.0, 10.0);
            sample(x, x, 0.0, 0.1)
        })
        .collect();
    let f = CouplingField::new(
        FieldArchitecture::default(),
        Normalization::from_samples(&samples),
        TimeRange::new(0.0, 0.5),
        1,
    );
    let cfg = TrainConfig {
        iterations: 20,
        batch_size: 64,
        ..Default::default()
    };
    let r = fit(&f, &samples, &cfg).unwrap();
    assert!(r.final_loss_flow <= 1e-6);
    let again = fit(&f, &samples, &cfg).unwrap();
    assert_eq!(r.history, again.history);
}

#[test]
fn fit_rejects_bad_config() {
    let f = random_field(1, 0.0);
    let s = random_samples(4, 1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    assert!(matches!(
        fit(&f, &s, &cfg),
        Err(DeformError::InvalidConfig(_))
    ));
    assert!(matches!(
        fit(&f, &[], &TrainConfig::default()),
        Err(DeformError::NoSamples)
    ));
}

#[test]
fn rigid_pair_recovers_known_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t =
        RigidTransform::from_axis_angle(Vec3::new(0.3, -0.5, 1.0), 0.7, Vec3::new(1.0, -2.0, 0.5));
    let src: Vec<Vec3> = (0..50).map(|_| rand_vec(&mut rng, -5.0, 5.0)).collect();
    let dst: Vec<Vec3> = src.iter().map(|p| t.apply(p)).collect();
    let est = fit_rigid_pair(&src, &dst).unwrap();
    assert!((est.rotation - t.rotation).abs().max() < 1e-9);
    assert!((est.translation - t.translation).norm() < 1e-9);
    let id = fit_rigid_pair(&src, &src).unwrap();
    assert!((id.rotation - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
    assert!(id.translation.norm() < 1e-12);
    let line: Vec<Vec3> = (0..10)
        .map(|k| Vec3::new(k as f64, 2.0 * k as f64, 1.0))
        .collect();
    assert!(fit_rigid_pair(&line, &line).is_none());
}

#[test]
fn rigid_trajectory_chains_from_middle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let step = RigidTransform::from_translation(Vec3::new(0.8, 0.1, 0.0));
    let times = [0.0, 0.1, 0.2, 0.3, 0.4];
    let mut samples = Vec::new();
    for w in times.windows(2) {
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 0.0, 10.0);
            samples.push(sample(x, step.apply(&x), w[0], w[1]));
        }
    }
    let field = fit_rigid(&samples, &times).unwrap();
    assert_eq!(field.canonical_index, 2);
    let x = Vec3::new(1.0, 2.0, 3.0);
    assert!((field.warp_seconds(&x, 0.0, 0.4) - (x + Vec3::new(3.2, 0.4, 0.0))).norm() < 1e-9);
    // halfway between keyframes
    assert!((field.warp_seconds(&x, 0.1, 0.15) - (x + Vec3::new(0.4, 0.05, 0.0))).norm() < 1e-9);
    let degenerate: Vec<_> = samples.iter().filter(|s| s.t_i != 0.2).copied().collect();
    assert_eq!(
        fit_rigid(&degenerate, &times).unwrap_err(),
        DeformError::DegenerateCorrespondences { t_i: 0.2, t_j: 0.3 }
    );
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut f = random_field(21, 0.3);
    let samples = random_samples(64, 22);
    let w = LossWeights {
        flow: 1.0,
        rad: 0.5,
    };
    let objective = |f: &CouplingField| {
        let (lf, lr) = f.losses(&samples);
        w.flow * lf + w.rad * lr
    };
    let (_, _, grad) = f.loss_and_gradient(&samples, &w);
    let base = f.params();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(0..base.len());
        let mut p = base.clone();
        p[k] = base[k] + h;
        f.set_params(&p).unwrap();
        let up = objective(&f);
        p[k] = base[k] - h;
        f.set_params(&p).unwrap();
        let down = objective(&f);
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "{worst}");
}
