// SPDX-License-Identifier: Apache-2.0

//! Radar-guided dynamic masks, scored against the simulator's masks.

use radarflow::ego_motion::{
    classify_dynamic, estimate_ego_velocity, RansacConfig, DEFAULT_TAU_DYN,
};
use radarflow::segmentation::{segment_frame, SegmentConfig};
use radarflow::simulator::{simulate, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        duration: 1.0,
        ..Default::default()
    };
    let sim = simulate(&scene)?;
    let cam = &sim.config.camera;
    let cfg = SegmentConfig::default();
    for f in &sim.frames {
        let est = estimate_ego_velocity(&f.radar, &RansacConfig::default())?;
        let labels = classify_dynamic(&f.radar, &est, DEFAULT_TAU_DYN);
        let mask = segment_frame(&f.radar, &labels, cam, &cfg)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in mask.data().iter().zip(f.mask_gt.data()) {
            inter += (*a == 1 && *b == 1) as usize;
            union += (*a == 1 || *b == 1) as usize;
        }
        let iou = if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        println!(
            "frame {:2}: {:5} mask pixels, {:5} true, IoU {iou:.3}",
            f.index,
            mask.count(),
            f.mask_gt.count()
        );
    }
    Ok(())
}
