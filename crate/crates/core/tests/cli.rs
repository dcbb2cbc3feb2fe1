// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radarflow::config::PipelineConfig;
use radarflow::ego_motion::EgoMotionEstimate;
use radarflow::io;
use radarflow::pipeline::{hash_file, Manifest, PipelineError, StageStatus};
use radarflow::simulator::{SceneConfig, SceneFiles};

fn radarflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radarflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_record(out: &Output) -> PipelineError {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

/// Writes a 0.5 s scene with the `simulate` subcommand.
fn simulated_scene(root: &Path) -> PathBuf {
    let cfg = SceneConfig {
        duration: 0.5,
        ..Default::default()
    };
    let cfg_path = root.join("scene_cfg.json");
    io::write_json(&cfg_path, &cfg).unwrap();
    let scene = root.join("scene");
    let out = radarflow(&["simulate", "--config", s(&cfg_path), "--out-dir", s(&scene)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    scene
}

fn small_pipeline(scene: &Path, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(scene, out);
    cfg.seed = 3;
    cfg.train.iterations = 20;
    cfg.train.batch_size = 128;
    cfg
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulated_scene(dir.path());
    let files = SceneFiles::new(&scene);
    let ego = dir.path().join("ego.jsonl");
    let labels = dir.path().join("labels.jsonl");
    let out = radarflow(&[
        "ego-motion",
        "--frames",
        s(&files.radar()),
        "--out",
        s(&ego),
        "--labels",
        s(&labels),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let est: Vec<EgoMotionEstimate> = io::read_jsonl(&ego).unwrap();
    assert_eq!(est.len(), 5);

    let masks = dir.path().join("masks");
    let out = radarflow(&[
        "segment",
        "--frames",
        s(&files.radar()),
        "--ego",
        s(&ego),
        "--cam",
        s(&files.camera()),
        "--out-mask-dir",
        s(&masks),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(io::read_mask(masks.join("0000.pgm")).unwrap().count() > 0);

    // eval only needs ego.jsonl in the prediction directory
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::copy(&ego, pred.join("ego.jsonl")).unwrap();
    let report = dir.path().join("report.json");
    let out = radarflow(&[
        "eval",
        "--gt",
        s(&scene),
        "--pred",
        s(&pred),
        "--report",
        s(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report.with_extension("csv").exists());
    let r: serde_json::Value = io::read_json(&report).unwrap();
    assert!(r["label_f1"].as_f64().unwrap() > 0.9);
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = radarflow(&[
        "ego-motion",
        "--frames",
        s(&missing),
        "--out",
        s(&dir.path().join("e.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_record(&out);
    assert_eq!(err.stage, "ego-motion");
    assert_eq!(err.kind, "NotFound");
    assert_eq!(err.path.as_deref(), Some(missing.as_path()));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(radarflow(&["ego-motion"]).status.code(), Some(2));
    assert_eq!(radarflow(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    std::fs::write(&cfg, r#"{"scene_dir": "s", "out_dir": "o", "sed": 1}"#).unwrap();
    let out = radarflow(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out).path.as_deref(), Some(cfg.as_path()));
}

#[test]
fn pipeline_runs_every_stage_and_hashes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulated_scene(dir.path());
    let out_dir = dir.path().join("out");
    let cfg_path = dir.path().join("pipeline.json");
    io::write_json(&cfg_path, &small_pipeline(&scene, &out_dir)).unwrap();
    let out = radarflow(&["pipeline", "--config", s(&cfg_path)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let manifest: Manifest = io::read_json(out_dir.join("manifest.json")).unwrap();
    let names: Vec<&str> = manifest.stages.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "load",
            "ego-motion",
            "segment",
            "scale",
            "lift-flow",
            "fit-deform",
            "eval"
        ]
    );
    assert!(manifest.stages.iter().all(|r| r.status == StageStatus::Ok));
    for r in &manifest.stages {
        for (rel, hash) in &r.artifacts {
            let p = out_dir.join(rel);
            if p.is_file() {
                assert_eq!(&hash_file(&p).unwrap(), hash, "{rel}");
            }
        }
    }
    for f in [
        "ego.jsonl",
        "labels.jsonl",
        "scale.json",
        "samples.jsonl",
        "field.json",
        "loss.csv",
        "report.json",
    ] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let eval = manifest.stage("eval").unwrap();
    assert!(eval.metrics["label_f1"] > 0.9);
}

#[test]
fn thread_count_does_not_change_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulated_scene(dir.path());
    let mut manifests = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("out{threads}"));
        let cfg_path = dir.path().join(format!("p{threads}.json"));
        // same out_dir name inside the config would collide; the manifest
        // does not record paths, so distinct directories compare equal
        io::write_json(&cfg_path, &small_pipeline(&scene, &out_dir)).unwrap();
        let out = radarflow(&["--threads", threads, "pipeline", "--config", s(&cfg_path)]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        manifests.push(std::fs::read(out_dir.join("manifest.json")).unwrap());
    }
    let a: Manifest = serde_json::from_slice(&manifests[0]).unwrap();
    let b: Manifest = serde_json::from_slice(&manifests[1]).unwrap();
    assert_eq!(a.stages, b.stages);
}

#[test]
fn pipeline_reports_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulated_scene(dir.path());
    std::fs::remove_file(SceneFiles::new(&scene).radar()).unwrap();
    let out_dir = dir.path().join("out");
    let cfg = small_pipeline(&scene, &out_dir);
    let failure = radarflow::pipeline::run_pipeline(&cfg).unwrap_err();
    assert_eq!(failure.error.stage, "load");
    assert_eq!(failure.error.path, Some(SceneFiles::new(&scene).radar()));
    assert_eq!(failure.manifest.stages[0].status, StageStatus::Error);
}
