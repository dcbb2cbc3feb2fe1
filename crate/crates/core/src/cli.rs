// SPDX-License-Identifier: Apache-2.0

//! Command-line front end behind the `radarflow` binary.
//!
//! Each stage command reads and writes the same files the pipeline does and
//! derives its seed the same way, so chaining the commands by hand
//! reproduces a `pipeline` run. Failures print one JSON error record on
//! stderr and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::PipelineConfig;
use crate::deformation::{warp_samples, CouplingField, FieldArchitecture, TrainConfig};
use crate::ego_motion::{EgoMotionEstimate, RansacConfig, DEFAULT_TAU_DYN};
use crate::flow_lift::LiftConfig;
use crate::geometry::CameraModel;
use crate::io::{self, IoError};
use crate::pipeline::{
    estimate_all, label_all, lift_all, run_pipeline, segment_all, train_field, write_history,
    PipelineError, ScaleSummary,
};
use crate::radar::RadarFrame;
use crate::scale::{apply_scale, recover_scale, ScaleConfig};
use crate::seed::derive_seed;
use crate::segmentation::SegmentConfig;
use crate::simulator::{
    evaluate, load_scene, simulate, write_scene, Predictions, SceneConfig, SceneFiles,
};

#[derive(Debug, Parser)]
#[command(
    name = "radarflow",
    version,
    about = "Radar-assisted dynamic scene geometry"
)]
pub struct Cli {
    /// Top-level seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RADARFLOW_THREADS")]
    pub threads: Option<usize>,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Simulate {
        /// Scene config JSON; the default scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// RANSAC ego velocity per radar frame.
    EgoMotion {
        #[arg(long)]
        frames: PathBuf,
        /// RANSAC config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-point dynamic labels (JSONL).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU_DYN)]
        tau_dyn: f64,
    },
    /// Composite dynamic masks from radar-anchored ROIs.
    Segment {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        ego: PathBuf,
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        out_mask_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU_DYN)]
        tau_dyn: f64,
    },
    /// Recover the metric scale of one relative depth map.
    Scale {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        cam: PathBuf,
        /// Radar JSONL; `--index` selects the frame.
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// JSON array of per-point dynamic flags.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metric depth output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Lift the flow between frames `index` and `index + 1` to scene flow.
    LiftFlow {
        #[arg(long)]
        flow: PathBuf,
        /// Metric depth of frame `index`.
        #[arg(long)]
        depth_i: PathBuf,
        /// Metric depth of frame `index + 1`.
        #[arg(long)]
        depth_j: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        ego: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU_DYN)]
        tau_dyn: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the coupling deformation field on scene-flow samples.
    FitDeform {
        #[arg(long)]
        samples: PathBuf,
        /// Training config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Field architecture JSON.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a pipeline output directory against a simulated scene.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// JSON report; a CSV copy is written next to it.
        #[arg(long)]
        report: PathBuf,
        /// Used only when the prediction has no `labels.jsonl`.
        #[arg(long, default_value_t = DEFAULT_TAU_DYN)]
        tau_dyn: f64,
    },
    /// Run every stage over a scene directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::EgoMotion { .. } => "ego-motion",
            Command::Segment { .. } => "segment",
            Command::Scale { .. } => "scale",
            Command::LiftFlow { .. } => "lift-flow",
            Command::FitDeform { .. } => "fit-deform",
            Command::Eval { .. } => "eval",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

/// Parses `args`, runs the command and maps failures to exit status 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&e).expect("error record serialises")
            );
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: DeserializeOwned>(stage: &str, path: &Path) -> Result<T, PipelineError> {
    io::read_json(path).map_err(|e| PipelineError::io(stage, path, e))
}

fn read_json_or_default<T: DeserializeOwned + Default>(
    stage: &str,
    path: Option<&PathBuf>,
) -> Result<T, PipelineError> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(stage, p))
}

fn io_at<T>(stage: &str, path: &Path, r: Result<T, IoError>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::io(stage, path, e))
}

fn invalid(stage: &str, e: &(impl std::fmt::Debug + std::fmt::Display)) -> PipelineError {
    PipelineError::new(stage, e)
}

fn frame_error<E: std::fmt::Debug + std::fmt::Display>(
    stage: &str,
) -> impl Fn((usize, E)) -> PipelineError + '_ {
    move |(k, e)| {
        let mut err = PipelineError::new(stage, &e);
        err.message = format!("frame {k}: {}", err.message);
        err
    }
}

fn mkdir(stage: &str, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        PipelineError::io(
            stage,
            dir,
            IoError::Io {
                path: dir.to_path_buf(),
                source,
            },
        )
    })
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let stage = cli.command.name();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Simulate { config, out_dir } => {
            let mut cfg: SceneConfig = read_json_or_default(stage, config.as_ref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let sim = simulate(&cfg).map_err(|e| invalid(stage, &e))?;
            io_at(stage, out_dir, write_scene(out_dir, &sim))?;
            log::info!("wrote {} frames to {}", sim.frames.len(), out_dir.display());
        }
        Command::EgoMotion {
            frames,
            config,
            out,
            labels,
            tau_dyn,
        } => {
            let ransac: RansacConfig = read_json_or_default(stage, config.as_ref())?;
            let radar = io_at(stage, frames, io::read_radar(frames))?;
            let est = estimate_all(&radar, &ransac, derive_seed(seed, "ego-motion"))
                .map_err(frame_error(stage))?;
            io_at(stage, out, io::write_jsonl(out, &est))?;
            if let Some(path) = labels {
                io_at(
                    stage,
                    path,
                    io::write_jsonl(path, &label_all(&radar, &est, *tau_dyn)),
                )?;
            }
        }
        Command::Segment {
            frames,
            ego,
            cam,
            out_mask_dir,
            config,
            tau_dyn,
        } => {
            let seg: SegmentConfig = read_json_or_default(stage, config.as_ref())?;
            let radar = io_at(stage, frames, io::read_radar(frames))?;
            let est: Vec<EgoMotionEstimate> = io_at(stage, ego, io::read_jsonl(ego))?;
            let cam: CameraModel = read_json(stage, cam)?;
            check_len(stage, ego, radar.len(), est.len())?;
            let labels = label_all(&radar, &est, *tau_dyn);
            let masks = segment_all(&radar, &labels, &cam, &seg, derive_seed(seed, "segment"))
                .map_err(frame_error(stage))?;
            mkdir(stage, out_mask_dir)?;
            for (k, m) in masks.iter().enumerate() {
                let p = out_mask_dir.join(format!("{k:04}.pgm"));
                io_at(stage, &p, io::write_mask(&p, m))?;
            }
        }
        Command::Scale {
            depth,
            cam,
            frame,
            index,
            labels,
            config,
            out,
            report,
        } => {
            let cfg: ScaleConfig = read_json_or_default(stage, config.as_ref())?;
            let rel = io_at(stage, depth, io::read_depth(depth))?;
            let cam: CameraModel = read_json(stage, cam)?;
            let radar = io_at(stage, frame, io::read_radar(frame))?;
            let f = pick_frame(stage, frame, &radar, *index)?;
            let labels: Vec<bool> = read_json(stage, labels)?;
            let r = recover_scale(&rel, &cam, f, &labels, &cfg).map_err(|e| invalid(stage, &e))?;
            let metric = apply_scale(&rel, r.scale).map_err(|e| invalid(stage, &e))?;
            io_at(stage, out, io::write_depth(out, &metric))?;
            io_at(stage, report, io::write_json(report, &r))?;
        }
        Command::LiftFlow {
            flow,
            depth_i,
            depth_j,
            mask,
            cam,
            frames,
            ego,
            index,
            config,
            tau_dyn,
            out,
        } => {
            let cfg: LiftConfig = read_json_or_default(stage, config.as_ref())?;
            let flow = io_at(stage, flow, io::read_flow(flow))?;
            let di = io_at(stage, depth_i, io::read_depth(depth_i))?;
            let dj = io_at(stage, depth_j, io::read_depth(depth_j))?;
            let mask = io_at(stage, mask, io::read_mask(mask))?;
            let cam: CameraModel = read_json(stage, cam)?;
            let radar = io_at(stage, frames, io::read_radar(frames))?;
            let est: Vec<EgoMotionEstimate> = io_at(stage, ego, io::read_jsonl(ego))?;
            check_len(stage, ego, radar.len(), est.len())?;
            let k = *index;
            let pair = [
                pick_frame(stage, frames, &radar, k)?.clone(),
                pick_frame(stage, frames, &radar, k + 1)?.clone(),
            ];
            let pair_est = [est[k].clone(), est[k + 1].clone()];
            let labels = label_all(&pair, &pair_est, *tau_dyn);
            let samples = lift_all(
                &[flow],
                &[di, dj],
                &[mask.clone(), mask],
                &cam,
                &pair,
                &pair_est,
                &labels,
                &cfg,
            )
            .map_err(frame_error(stage))?;
            io_at(stage, out, io::write_samples(out, &samples))?;
        }
        Command::FitDeform {
            samples,
            config,
            arch,
            out,
            history,
        } => {
            let train: TrainConfig = read_json_or_default(stage, config.as_ref())?;
            let arch: FieldArchitecture = read_json_or_default(stage, arch.as_ref())?;
            let samples = io_at(stage, samples, io::read_samples(samples))?;
            let result = train_field(&samples, &arch, &train, derive_seed(seed, "fit-deform"))
                .map_err(|e| invalid(stage, &e))?;
            io_at(stage, out, io::write_json(out, &result.field))?;
            if let Some(h) = history {
                io_at(stage, h, write_history(h, &result.history))?;
            }
            log::info!(
                "final losses: flow {:.6e}, rad {:.6e}",
                result.final_loss_flow,
                result.final_loss_rad
            );
        }
        Command::Eval {
            gt,
            pred,
            report,
            tau_dyn,
        } => {
            let sim = load_scene(gt).map_err(|e| match e {
                crate::simulator::SimError::Io(io) => {
                    PipelineError::io(stage, &SceneFiles::new(gt).config(), io)
                }
                other => invalid(stage, &other),
            })?;
            let predictions = load_predictions(stage, pred, &sim.radar_frames(), *tau_dyn)?;
            let r = evaluate(&sim, &predictions).map_err(|e| invalid(stage, &e))?;
            io_at(stage, report, r.write_json(report))?;
            let csv = report.with_extension("csv");
            io_at(stage, &csv, r.write_csv(&csv))?;
        }
        Command::Pipeline { config } => {
            let mut cfg: PipelineConfig = read_json(stage, config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let manifest = run_pipeline(&cfg).map_err(|f| f.error)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&manifest).expect("manifest serialises")
            );
        }
    }
    Ok(())
}

fn check_len(stage: &str, path: &Path, frames: usize, got: usize) -> Result<(), PipelineError> {
    if frames == got {
        return Ok(());
    }
    Err(PipelineError {
        stage: stage.into(),
        kind: "LengthMismatch".into(),
        message: format!("{got} records for {frames} radar frames"),
        path: Some(path.to_path_buf()),
    })
}

fn pick_frame<'a>(
    stage: &str,
    path: &Path,
    frames: &'a [RadarFrame],
    k: usize,
) -> Result<&'a RadarFrame, PipelineError> {
    frames.get(k).ok_or_else(|| PipelineError {
        stage: stage.into(),
        kind: "FrameIndex".into(),
        message: format!("frame {k} requested, file has {}", frames.len()),
        path: Some(path.to_path_buf()),
    })
}

/// Reads a pipeline output directory. Only `ego.jsonl` is required.
fn load_predictions(
    stage: &str,
    dir: &Path,
    frames: &[RadarFrame],
    tau_dyn: f64,
) -> Result<Predictions, PipelineError> {
    let out = crate::pipeline::OutputLayout::new(dir);
    let ego = out.ego();
    let est: Vec<EgoMotionEstimate> = io_at(stage, &ego, io::read_jsonl(&ego))?;
    check_len(stage, &ego, frames.len(), est.len())?;
    let labels_path = out.labels();
    let dyn_labels = if labels_path.is_file() {
        io_at(stage, &labels_path, io::read_jsonl(&labels_path))?
    } else {
        label_all(frames, &est, tau_dyn)
    };
    let scales = if out.scale().is_file() {
        read_json::<ScaleSummary>(stage, &out.scale())?.frame_scales()
    } else {
        Vec::new()
    };
    let samples = if out.samples().is_file() {
        io_at(stage, &out.samples(), io::read_samples(out.samples()))?
    } else {
        Vec::new()
    };
    let warped = if out.field().is_file() && !samples.is_empty() {
        let field: CouplingField = read_json(stage, &out.field())?;
        field.validate().map_err(|e| PipelineError {
            path: Some(out.field()),
            ..invalid(stage, &e)
        })?;
        warp_samples(&field, &samples)
    } else {
        Vec::new()
    };
    Ok(Predictions {
        ego_velocities: est.iter().map(|e| e.velocity).collect(),
        dyn_labels,
        scales,
        samples,
        warped,
    })
}
