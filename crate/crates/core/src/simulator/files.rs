// SPDX-License-Identifier: Apache-2.0

//! Scene directory layout.
//!
//! ```text
//! scene.json          SceneConfig (re-simulating it reproduces everything)
//! cam.json            CameraModel
//! radar.jsonl         radar frames
//! poses.json          per-frame timestamp, world_from_ego, ego velocity, object centres
//! depth/NNNN.dpf      metric depth
//! depth_rel/NNNN.dpf  relative depth
//! flow/NNNN.flw       flow to the next frame (all but the last frame)
//! mask/NNNN.pgm       ground-truth dynamic mask
//! labels/NNNN.json    ground-truth dynamic labels per radar point
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{simulate, SceneConfig, SimError, Simulation};
use crate::geometry::{RigidTransform, Vec3};
use crate::io::{self, IoError};

/// Paths inside a scene directory.
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub dir: PathBuf,
}

impl SceneFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("scene.json")
    }

    pub fn camera(&self) -> PathBuf {
        self.dir.join("cam.json")
    }

    pub fn radar(&self) -> PathBuf {
        self.dir.join("radar.jsonl")
    }

    pub fn poses(&self) -> PathBuf {
        self.dir.join("poses.json")
    }

    pub fn depth(&self, k: usize) -> PathBuf {
        self.dir.join("depth").join(format!("{k:04}.dpf"))
    }

    pub fn depth_relative(&self, k: usize) -> PathBuf {
        self.dir.join("depth_rel").join(format!("{k:04}.dpf"))
    }

    pub fn flow(&self, k: usize) -> PathBuf {
        self.dir.join("flow").join(format!("{k:04}.flw"))
    }

    pub fn mask(&self, k: usize) -> PathBuf {
        self.dir.join("mask").join(format!("{k:04}.pgm"))
    }

    pub fn labels(&self, k: usize) -> PathBuf {
        self.dir.join("labels").join(format!("{k:04}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub t: f64,
    pub world_from_ego: RigidTransform,
    pub ego_velocity: Vec3,
    pub object_centers: Vec<Vec3>,
}

fn mkdir(p: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(p).map_err(|source| IoError::Io {
        path: p.to_path_buf(),
        source,
    })
}

pub fn write_scene(dir: impl AsRef<Path>, sim: &Simulation) -> Result<(), IoError> {
    let files = SceneFiles::new(dir.as_ref());
    for sub in ["depth", "depth_rel", "flow", "mask", "labels"] {
        mkdir(&files.dir.join(sub))?;
    }
    io::write_json(files.config(), &sim.config)?;
    io::write_json(files.camera(), &sim.config.camera)?;
    io::write_radar(files.radar(), &sim.radar_frames())?;
    let poses: Vec<FramePose> = sim
        .frames
        .iter()
        .map(|f| FramePose {
            t: f.timestamp,
            world_from_ego: f.ego_pose,
            ego_velocity: f.ego_velocity,
            object_centers: f.object_centers.clone(),
        })
        .collect();
    io::write_json(files.poses(), &poses)?;
    for f in &sim.frames {
        let k = f.index;
        io::write_depth(files.depth(k), &f.depth_metric)?;
        io::write_depth(files.depth_relative(k), &f.depth_relative)?;
        if let Some(flow) = &f.flow_to_next {
            io::write_flow(files.flow(k), flow)?;
        }
        io::write_mask(files.mask(k), &f.mask_gt)?;
        io::write_json(files.labels(k), &f.dyn_labels_gt)?;
    }
    Ok(())
}

/// Reads `scene.json` and re-simulates; the simulator is deterministic, so
/// this reproduces the written ground truth exactly.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<Simulation, SimError> {
    let cfg: SceneConfig = io::read_json(SceneFiles::new(dir.as_ref()).config())?;
    simulate(&cfg)
}
