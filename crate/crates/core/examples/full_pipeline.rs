// SPDX-License-Identifier: Apache-2.0

//! End-to-end run: simulate, run every stage, print the manifest summary and
//! the evaluation report.

use radarflow::config::PipelineConfig;
use radarflow::pipeline::run_pipeline;
use radarflow::simulator::{simulate, write_scene, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = tempfile_dir()?;
    let scene_dir = root.join("scene");
    let scene = SceneConfig {
        duration: 1.0,
        ..Default::default()
    };
    write_scene(&scene_dir, &simulate(&scene)?)?;

    let mut cfg = PipelineConfig::new(&scene_dir, root.join("out"));
    cfg.seed = 1;
    cfg.train.iterations = 200;
    let manifest = match run_pipeline(&cfg) {
        Ok(m) => m,
        Err(failure) => return Err(Box::new(failure.error)),
    };
    for stage in &manifest.stages {
        println!("{:<11} {:?}", stage.name, stage.status);
    }
    if let Some(eval) = manifest.stage("eval") {
        for (k, v) in &eval.metrics {
            println!("  {k:<22} {v:.4}");
        }
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("radarflow-example");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
