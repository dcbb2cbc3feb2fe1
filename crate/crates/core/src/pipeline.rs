// SPDX-License-Identifier: Apache-2.0

//! End-to-end run over a scene directory.
//!
//! Stages run in order: load, ego-motion, segment, scale, lift-flow,
//! fit-deform, eval. Each stage writes its artifacts into the output
//! directory and adds a record to `manifest.json` holding its derived seed,
//! scalar metrics and the SHA-256 of every artifact. The manifest carries no
//! timings or absolute paths, so equal configs give byte-identical manifests.
//!
//! Stage seeds are `derive_seed(seed, stage)`; per-frame seeds below them are
//! `derive_indexed(stage_seed, "frame", k)`.
//!
//! Output layout:
//!
//! ```text
//! ego.jsonl        one EgoMotionEstimate per frame
//! labels.jsonl     dynamic flag per radar point, one line per frame
//! masks/NNNN.pgm   composited dynamic masks
//! scale.json       per-frame reports and the sequence scale
//! samples.jsonl    scene-flow samples with radial velocities
//! field.json       trained coupling field
//! loss.csv         training loss per iteration
//! report.json/csv  metrics against ground truth (when available)
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::deformation::{
    fit, warp_samples, CouplingField, DeformError, FieldArchitecture, FitResult, Normalization,
    TimeRange, TrainConfig,
};
use crate::ego_motion::{
    classify_dynamic, estimate_ego_velocity, EgoMotionError, EgoMotionEstimate, RansacConfig,
};
use crate::flow_lift::{
    associate_radial_velocity, drop_implausible, lift_scene_flow, LiftConfig, LiftError,
    SceneFlowSample,
};
use crate::geometry::CameraModel;
use crate::io::{self, IoError};
use crate::radar::RadarFrame;
use crate::raster::{DepthImage, DynamicMask, FlowImage};
use crate::scale::{aggregate_sequence_scale, recover_scale, ScaleConfig, ScaleReport};
use crate::seed::{derive_indexed, derive_seed};
use crate::segmentation::{segment_frame, SegmentConfig, SegmentError};
use crate::simulator::{evaluate, load_scene, MetricsReport, Predictions, SceneFiles};

/// Machine-readable failure record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: String,
    /// Error variant name, e.g. `Io` or `NoConsensus`.
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn variant_name(e: &impl Debug) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or_default()
        .to_string()
}

impl PipelineError {
    pub fn new(stage: &str, error: &(impl Debug + std::fmt::Display)) -> Self {
        Self {
            stage: stage.into(),
            kind: variant_name(error),
            message: error.to_string(),
            path: None,
        }
    }

    /// Wraps an I/O error, naming `path` unless the error already names one.
    pub fn io(stage: &str, path: &Path, error: IoError) -> Self {
        let named = match &error {
            IoError::Io { path, .. } => path.clone(),
            _ => path.to_path_buf(),
        };
        let kind = match &error {
            IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "NotFound".to_string()
            }
            other => variant_name(other),
        };
        Self {
            stage: stage.into(),
            kind,
            message: error.to_string(),
            path: Some(named),
        }
    }

    fn config(error: ConfigError) -> Self {
        match error {
            ConfigError::MissingPath(p) => Self {
                stage: "config".into(),
                kind: "NotFound".into(),
                message: format!("{} does not exist", p.display()),
                path: Some(p),
            },
            ConfigError::Io(e) => Self::io("config", Path::new(""), e),
            other => Self::new("config", &other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
    /// Output-relative path → SHA-256 (hex). Directories hash the sorted
    /// `name:hash` lines of their files.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<PipelineError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub status: StageStatus,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: PipelineError,
    /// Stages up to and including the failed one.
    pub manifest: Box<Manifest>,
}

/// Paths inside a pipeline output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub dir: PathBuf,
}

impl OutputLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn ego(&self) -> PathBuf {
        self.dir.join("ego.jsonl")
    }

    pub fn labels(&self) -> PathBuf {
        self.dir.join("labels.jsonl")
    }

    pub fn masks(&self) -> PathBuf {
        self.dir.join("masks")
    }

    pub fn mask(&self, k: usize) -> PathBuf {
        self.masks().join(format!("{k:04}.pgm"))
    }

    pub fn scale(&self) -> PathBuf {
        self.dir.join("scale.json")
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples.jsonl")
    }

    pub fn field(&self) -> PathBuf {
        self.dir.join("field.json")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

/// Contents of `scale.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    /// Median of the recovered per-frame scales; applied to every frame.
    pub sequence_scale: f64,
    /// `None` where recovery failed for the frame.
    pub per_frame: Vec<Option<ScaleReport>>,
}

impl ScaleSummary {
    /// Per-frame scale, falling back to the sequence scale.
    pub fn frame_scales(&self) -> Vec<f64> {
        self.per_frame
            .iter()
            .map(|r| r.as_ref().map_or(self.sequence_scale, |r| r.scale))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

fn hash_dir(path: &Path) -> Result<String, IoError> {
    let wrap = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut names: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(wrap)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(wrap)?;
    names.sort();
    let mut listing = String::new();
    for p in names {
        let name = p
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        listing.push_str(&format!("{name}:{}\n", hash_file(&p)?));
    }
    Ok(sha256_hex(listing.as_bytes()))
}

// ---------------------------------------------------------------------------
// Stage functions, shared with the CLI.

/// RANSAC per frame with per-frame seeds below `stage_seed`.
pub fn estimate_all(
    frames: &[RadarFrame],
    ransac: &RansacConfig,
    stage_seed: u64,
) -> Result<Vec<EgoMotionEstimate>, (usize, EgoMotionError)> {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let cfg = RansacConfig {
                seed: derive_indexed(stage_seed, "frame", k as u64),
                ..*ransac
            };
            estimate_ego_velocity(f, &cfg).map_err(|e| (k, e))
        })
        .collect()
}

pub fn label_all(
    frames: &[RadarFrame],
    estimates: &[EgoMotionEstimate],
    tau_dyn: f64,
) -> Vec<Vec<bool>> {
    frames
        .iter()
        .zip(estimates)
        .map(|(f, e)| classify_dynamic(f, e, tau_dyn))
        .collect()
}

pub fn segment_all(
    frames: &[RadarFrame],
    labels: &[Vec<bool>],
    cam: &CameraModel,
    cfg: &SegmentConfig,
    stage_seed: u64,
) -> Result<Vec<DynamicMask>, (usize, SegmentError)> {
    frames
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (f, l))| {
            let cfg = SegmentConfig {
                seed: derive_indexed(stage_seed, "frame", k as u64),
                ..*cfg
            };
            segment_frame(f, l, cam, &cfg).map_err(|e| (k, e))
        })
        .collect()
}

/// Per-frame recovery; `None` when no frame yields a scale.
pub fn recover_scales(
    depths: &[DepthImage],
    cam: &CameraModel,
    frames: &[RadarFrame],
    labels: &[Vec<bool>],
    cfg: &ScaleConfig,
) -> Option<ScaleSummary> {
    let per_frame: Vec<Option<ScaleReport>> = depths
        .iter()
        .zip(frames.iter().zip(labels))
        .enumerate()
        .map(|(k, (d, (f, l)))| match recover_scale(d, cam, f, l, cfg) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("frame {k}: no scale ({e})");
                None
            }
        })
        .collect();
    let recovered: Vec<f64> = per_frame.iter().flatten().map(|r| r.scale).collect();
    Some(ScaleSummary {
        sequence_scale: aggregate_sequence_scale(&recovered)?,
        per_frame,
    })
}

/// Lifts every consecutive pair `(k, k + 1)`, drops samples faster than
/// `cfg.max_speed` and attaches radial velocities from frame `k`'s dynamic
/// returns.
#[allow(clippy::too_many_arguments)]
pub fn lift_all(
    flows: &[FlowImage],
    depths: &[DepthImage],
    masks: &[DynamicMask],
    cam: &CameraModel,
    frames: &[RadarFrame],
    estimates: &[EgoMotionEstimate],
    labels: &[Vec<bool>],
    cfg: &LiftConfig,
) -> Result<Vec<SceneFlowSample>, (usize, LiftError)> {
    let mut out = Vec::new();
    for (k, flow) in flows.iter().enumerate() {
        let (fi, fj) = (&frames[k], &frames[k + 1]);
        let (pose_i, pose_j) = (fi.ego_pose(), fj.ego_pose());
        let samples = lift_scene_flow(
            flow,
            &depths[k],
            &depths[k + 1],
            &masks[k],
            cam,
            &pose_i,
            &pose_j,
            fi.timestamp,
            fj.timestamp,
            cfg.stride,
        )
        .map_err(|e| (k, e))?;
        let samples = drop_implausible(samples, cfg.max_speed);
        let samples = associate_radial_velocity(
            &samples,
            fi,
            &labels[k],
            &pose_i,
            &estimates[k].velocity,
            cfg.max_association_distance,
        )
        .map_err(|e| (k, e))?;
        out.extend(samples);
    }
    Ok(out)
}

/// Fresh field over the samples' extent and time span, then [`fit`].
/// Initialisation and batching seeds derive from `stage_seed`.
pub fn train_field(
    samples: &[SceneFlowSample],
    architecture: &FieldArchitecture,
    train: &TrainConfig,
    stage_seed: u64,
) -> Result<FitResult, DeformError> {
    if samples.is_empty() {
        return Err(DeformError::NoSamples);
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.t_i), hi.max(s.t_j))
        });
    let field = CouplingField::new(
        *architecture,
        Normalization::from_samples(samples),
        TimeRange::new(lo, hi),
        derive_seed(stage_seed, "init"),
    );
    let cfg = TrainConfig {
        seed: derive_seed(stage_seed, "batches"),
        ..*train
    };
    fit(&field, samples, &cfg)
}

pub fn write_history(path: &Path, history: &[f64]) -> Result<(), IoError> {
    let wrap = |e: csv::Error| IoError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["iteration", "loss"]).map_err(wrap)?;
    for (k, l) in history.iter().enumerate() {
        w.write_record([k.to_string(), l.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------

struct Inputs {
    cam: CameraModel,
    frames: Vec<RadarFrame>,
    depths: Vec<DepthImage>,
    flows: Vec<FlowImage>,
}

fn load_inputs(scene: &SceneFiles) -> Result<Inputs, PipelineError> {
    const STAGE: &str = "load";
    let read_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e| PipelineError::io(STAGE, &p, e)
    };
    let cam: CameraModel = io::read_json(scene.camera()).map_err(read_err(&scene.camera()))?;
    let frames = io::read_radar(scene.radar()).map_err(read_err(&scene.radar()))?;
    if frames.len() < 2 {
        return Err(PipelineError {
            stage: STAGE.into(),
            kind: "TooFewFrames".into(),
            message: format!("need at least two radar frames, found {}", frames.len()),
            path: Some(scene.radar()),
        });
    }
    let mut depths = Vec::with_capacity(frames.len());
    for k in 0..frames.len() {
        let p = scene.depth_relative(k);
        depths.push(io::read_depth(&p).map_err(read_err(&p))?);
    }
    let mut flows = Vec::with_capacity(frames.len() - 1);
    for k in 0..frames.len() - 1 {
        let p = scene.flow(k);
        flows.push(io::read_flow(&p).map_err(read_err(&p))?);
    }
    for (k, d) in depths.iter().enumerate() {
        if (d.width(), d.height()) != (cam.width, cam.height) {
            return Err(PipelineError {
                stage: STAGE.into(),
                kind: "DimensionMismatch".into(),
                message: format!("depth {k} does not match the camera size"),
                path: Some(scene.depth_relative(k)),
            });
        }
    }
    Ok(Inputs {
        cam,
        frames,
        depths,
        flows,
    })
}

struct Recorder {
    out: OutputLayout,
    manifest: Manifest,
}

impl Recorder {
    fn stage<T>(
        &mut self,
        name: &str,
        seed: Option<u64>,
        f: impl FnOnce(&mut StageRecord) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let mut rec = StageRecord {
            name: name.into(),
            status: StageStatus::Ok,
            seed,
            metrics: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            error: None,
        };
        let result = f(&mut rec);
        if let Err(e) = &result {
            rec.status = StageStatus::Error;
            rec.error = Some(e.clone());
        }
        self.manifest.stages.push(rec);
        result
    }
}

fn write_err(stage: &str, path: &Path) -> impl Fn(IoError) -> PipelineError {
    let stage = stage.to_string();
    let path = path.to_path_buf();
    move |e| PipelineError::io(&stage, &path, e)
}

fn stage_err<E: Debug + std::fmt::Display>(stage: &str) -> impl Fn((usize, E)) -> PipelineError {
    let stage = stage.to_string();
    move |(k, e)| {
        let mut err = PipelineError::new(&stage, &e);
        err.message = format!("frame {k}: {}", err.message);
        err
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn report_metrics(report: &MetricsReport) -> BTreeMap<String, f64> {
    let value = serde_json::to_value(report).expect("report serialises");
    value
        .as_object()
        .into_iter()
        .flatten()
        .filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)))
        .collect()
}

/// Runs every stage. On failure the partial manifest (with the failing
/// stage's error record) is still written when the output directory exists.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, PipelineFailure> {
    let manifest = Manifest {
        config_sha256: sha256_hex(&cfg.canonical_json()),
        seed: cfg.seed,
        status: StageStatus::Ok,
        stages: Vec::new(),
    };
    let mut rec = Recorder {
        out: OutputLayout::new(&cfg.out_dir),
        manifest,
    };
    match run_stages(cfg, &mut rec) {
        Ok(()) => {
            let m = rec.manifest;
            io::write_json(rec.out.manifest(), &m).map_err(|e| PipelineFailure {
                error: PipelineError::io("manifest", &rec.out.manifest(), e),
                manifest: Box::new(m.clone()),
            })?;
            Ok(m)
        }
        Err(error) => {
            let mut m = rec.manifest;
            m.status = StageStatus::Error;
            if rec.out.dir.is_dir() {
                // best effort: the error record is returned either way
                let _ = io::write_json(rec.out.manifest(), &m);
            }
            Err(PipelineFailure {
                error,
                manifest: Box::new(m),
            })
        }
    }
}

fn run_stages(cfg: &PipelineConfig, rec: &mut Recorder) -> Result<(), PipelineError> {
    cfg.validate().map_err(PipelineError::config)?;
    if !cfg.scene_dir.is_dir() {
        return Err(PipelineError::config(ConfigError::MissingPath(
            cfg.scene_dir.clone(),
        )));
    }
    let out = rec.out.clone();
    std::fs::create_dir_all(out.masks()).map_err(|source| {
        PipelineError::io(
            "config",
            &out.dir,
            IoError::Io {
                path: out.dir.clone(),
                source,
            },
        )
    })?;
    let scene = SceneFiles::new(&cfg.scene_dir);

    let inputs = rec.stage("load", None, |r| {
        let inputs = load_inputs(&scene)?;
        r.metrics
            .insert("frames".into(), inputs.frames.len() as f64);
        r.metrics.insert(
            "radar_points".into(),
            inputs.frames.iter().map(|f| f.len()).sum::<usize>() as f64,
        );
        Ok(inputs)
    })?;
    let Inputs {
        cam,
        frames,
        depths,
        flows,
    } = inputs;

    let ego_seed = derive_seed(cfg.seed, "ego-motion");
    let (estimates, labels) = rec.stage("ego-motion", Some(ego_seed), |r| {
        let est = estimate_all(&frames, &cfg.ransac, ego_seed).map_err(stage_err("ego-motion"))?;
        let labels = label_all(&frames, &est, cfg.tau_dyn);
        io::write_jsonl(out.ego(), &est).map_err(write_err("ego-motion", &out.ego()))?;
        io::write_jsonl(out.labels(), &labels).map_err(write_err("ego-motion", &out.labels()))?;
        rec_artifacts(r, &out, &[out.ego(), out.labels()])?;
        r.metrics.insert(
            "mean_inliers".into(),
            mean(est.iter().map(|e| e.inlier_indices.len() as f64)),
        );
        r.metrics.insert(
            "mean_rms_residual".into(),
            mean(est.iter().map(|e| e.rms_residual)),
        );
        r.metrics.insert(
            "dynamic_points".into(),
            labels.iter().flatten().filter(|d| **d).count() as f64,
        );
        Ok((est, labels))
    })?;

    let seg_seed = derive_seed(cfg.seed, "segment");
    let masks = rec.stage("segment", Some(seg_seed), |r| {
        let masks = segment_all(&frames, &labels, &cam, &cfg.segment, seg_seed)
            .map_err(stage_err("segment"))?;
        for (k, m) in masks.iter().enumerate() {
            io::write_mask(out.mask(k), m).map_err(write_err("segment", &out.mask(k)))?;
        }
        rec_artifacts(r, &out, &[out.masks()])?;
        r.metrics.insert(
            "mean_mask_pixels".into(),
            mean(masks.iter().map(|m| m.count() as f64)),
        );
        Ok(masks)
    })?;

    let summary = rec.stage("scale", None, |r| {
        let summary =
            recover_scales(&depths, &cam, &frames, &labels, &cfg.scale).ok_or_else(|| {
                PipelineError {
                    stage: "scale".into(),
                    kind: "NoScale".into(),
                    message: "no frame yielded a scale".into(),
                    path: None,
                }
            })?;
        io::write_json(out.scale(), &summary).map_err(write_err("scale", &out.scale()))?;
        rec_artifacts(r, &out, &[out.scale()])?;
        r.metrics
            .insert("sequence_scale".into(), summary.sequence_scale);
        r.metrics.insert(
            "frames_recovered".into(),
            summary.per_frame.iter().flatten().count() as f64,
        );
        r.metrics.insert(
            "mean_samples".into(),
            mean(
                summary
                    .per_frame
                    .iter()
                    .flatten()
                    .map(|s| s.sample_count as f64),
            ),
        );
        Ok(summary)
    })?;

    let samples = rec.stage("lift-flow", None, |r| {
        let metric: Vec<DepthImage> = depths
            .iter()
            .map(|d| d.apply_scale(summary.sequence_scale))
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::new("lift-flow", &e))?;
        let samples = lift_all(
            &flows, &metric, &masks, &cam, &frames, &estimates, &labels, &cfg.lift,
        )
        .map_err(stage_err("lift-flow"))?;
        io::write_samples(out.samples(), &samples)
            .map_err(write_err("lift-flow", &out.samples()))?;
        rec_artifacts(r, &out, &[out.samples()])?;
        r.metrics.insert("samples".into(), samples.len() as f64);
        r.metrics.insert(
            "with_radial_velocity".into(),
            samples
                .iter()
                .filter(|s| s.radial_velocity.is_some())
                .count() as f64,
        );
        Ok(samples)
    })?;

    let fit_seed = derive_seed(cfg.seed, "fit-deform");
    let fitted = rec.stage("fit-deform", Some(fit_seed), |r| {
        let result = train_field(&samples, &cfg.architecture, &cfg.train, fit_seed)
            .map_err(|e| PipelineError::new("fit-deform", &e))?;
        io::write_json(out.field(), &result.field)
            .map_err(write_err("fit-deform", &out.field()))?;
        write_history(&out.history(), &result.history)
            .map_err(write_err("fit-deform", &out.history()))?;
        rec_artifacts(r, &out, &[out.field(), out.history()])?;
        r.metrics
            .insert("iterations".into(), result.history.len() as f64);
        r.metrics
            .insert("final_loss_flow".into(), result.final_loss_flow);
        r.metrics
            .insert("final_loss_rad".into(), result.final_loss_rad);
        r.metrics.insert(
            "mean_flow_residual".into(),
            (result.final_loss_flow / samples.len() as f64).sqrt(),
        );
        Ok(result)
    })?;

    if !(cfg.evaluate && scene.config().is_file()) {
        rec.stage("eval", None, |r| {
            r.status = StageStatus::Skipped;
            Ok(())
        })?;
        return Ok(());
    }
    rec.stage("eval", None, |r| {
        let sim = load_scene(&cfg.scene_dir).map_err(|e| match e {
            crate::simulator::SimError::Io(io) => PipelineError::io("eval", &scene.config(), io),
            other => PipelineError::new("eval", &other),
        })?;
        let pred = Predictions {
            ego_velocities: estimates.iter().map(|e| e.velocity).collect(),
            dyn_labels: labels.clone(),
            scales: summary.frame_scales(),
            warped: warp_samples(&fitted.field, &samples),
            samples: samples.clone(),
        };
        let report = evaluate(&sim, &pred).map_err(|e| PipelineError::new("eval", &e))?;
        report
            .write_json(out.report())
            .map_err(write_err("eval", &out.report()))?;
        report
            .write_csv(out.report_csv())
            .map_err(write_err("eval", &out.report_csv()))?;
        rec_artifacts(r, &out, &[out.report(), out.report_csv()])?;
        r.metrics = report_metrics(&report);
        Ok(())
    })
}

fn rec_artifacts(
    r: &mut StageRecord,
    out: &OutputLayout,
    paths: &[PathBuf],
) -> Result<(), PipelineError> {
    for path in paths {
        let hash = if path.is_dir() {
            hash_dir(path)
        } else {
            hash_file(path)
        }
        .map_err(|e| PipelineError::io(&r.name, path, e))?;
        let rel = path.strip_prefix(&out.dir).unwrap_or(path);
        let mut key = rel.to_string_lossy().replace('\\', "/");
        if path.is_dir() {
            key.push('/');
        }
        r.artifacts.insert(key, hash);
    }
    Ok(())
}
