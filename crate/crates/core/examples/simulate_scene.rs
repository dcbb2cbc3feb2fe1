// SPDX-License-Identifier: Apache-2.0

//! Simulates the default driving scene and writes it as a scene directory.
//!
//! ```text
//! cargo run --release --example simulate_scene -- /tmp/scene
//! ```

use radarflow::simulator::{simulate, write_scene, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scene".into());
    let sim = simulate(&SceneConfig::default())?;
    write_scene(&out, &sim)?;

    let points: usize = sim.frames.iter().map(|f| f.radar.len()).sum();
    let dynamic: usize = sim
        .frames
        .iter()
        .map(|f| f.dyn_labels_gt.iter().filter(|d| **d).count())
        .sum();
    println!("{} frames written to {out}", sim.frames.len());
    println!("{points} radar returns, {dynamic} on moving objects");
    println!("relative depth scale {}", sim.config.relative_depth_scale);
    Ok(())
}
