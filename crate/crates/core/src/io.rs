// SPDX-License-Identifier: Apache-2.0

//! On-disk formats.
//!
//! | format | layout |
//! |---|---|
//! | DPF1 depth | `"DPF1"`, u32 width, u32 height, u8 scale state (0 relative, 1 metric), `w·h` f32 z-depths, row-major, 0 = invalid |
//! | FLW1 flow | `"FLW1"`, u32 width, u32 height, `w·h` interleaved f32 `(du, dv)`, row-major |
//! | radar | JSON Lines, one frame per line: `{"t", "sensor_from_world": [16], "points": [[x, y, z, vr], ...]}` |
//! | mask | binary PGM (`P5`), 0 or 255 |
//! | point cloud | ASCII PLY with `x y z` and optional `vr` |
//!
//! Integers and floats are little-endian. JSON floats use the shortest
//! representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow_lift::SceneFlowSample;
use crate::geometry::{RigidTransform, Vec3};
use crate::radar::{RadarFrame, RadarPoint};
use crate::raster::{DepthImage, DynamicMask, FlowImage, ScaleState};

/// Rasters larger than this many pixels are rejected.
pub const MAX_PIXELS: u64 = 1 << 31;

const DEPTH_MAGIC: &[u8; 4] = b"DPF1";
const FLOW_MAGIC: &[u8; 4] = b"FLW1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: need {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{width}x{height} exceeds 2^31 pixels")]
    DimensionOverflow { width: u32, height: u32 },
    #[error("invalid content: {0}")]
    InvalidValue(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: timestamp {next} does not follow {prev}")]
    NonMonotonicTimestamps { line: usize, prev: f64, next: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn header(magic: &[u8; 4], width: u32, height: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out
}

/// Parses a raster header; returns `(width, height)`.
fn parse_header(bytes: &[u8], magic: &[u8; 4]) -> Result<(u32, u32), IoError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let n = bytes.len().min(4);
        return Err(IoError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::TruncatedFile {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width as u64 * height as u64 > MAX_PIXELS {
        return Err(IoError::DimensionOverflow { width, height });
    }
    Ok((width, height))
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
}

fn need(bytes: &[u8], expected: u64) -> Result<(), IoError> {
    if (bytes.len() as u64) < expected {
        return Err(IoError::TruncatedFile {
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

pub fn encode_depth(depth: &DepthImage) -> Vec<u8> {
    let mut out = header(DEPTH_MAGIC, depth.width(), depth.height());
    out.push(match depth.scale_state {
        ScaleState::Relative => 0,
        ScaleState::Metric => 1,
    });
    out.reserve(depth.data().len() * 4);
    for v in depth.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthImage, IoError> {
    let (w, h) = parse_header(bytes, DEPTH_MAGIC)?;
    let n = w as u64 * h as u64;
    need(bytes, HEADER_LEN as u64 + 1 + 4 * n)?;
    let scale_state = match bytes[HEADER_LEN] {
        0 => ScaleState::Relative,
        1 => ScaleState::Metric,
        s => return Err(IoError::InvalidValue(format!("scale state byte {s}"))),
    };
    let body = &bytes[HEADER_LEN + 1..HEADER_LEN + 1 + 4 * n as usize];
    DepthImage::new(w, h, f32s(body).collect(), scale_state)
        .map_err(|e| IoError::InvalidValue(e.to_string()))
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthImage) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_depth(depth))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthImage, IoError> {
    decode_depth(&read_bytes(path.as_ref())?)
}

pub fn encode_flow(flow: &FlowImage) -> Vec<u8> {
    let mut out = header(FLOW_MAGIC, flow.width(), flow.height());
    out.reserve(flow.data().len() * 8);
    for [du, dv] in flow.data() {
        out.extend_from_slice(&(*du as f32).to_le_bytes());
        out.extend_from_slice(&(*dv as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowImage, IoError> {
    let (w, h) = parse_header(bytes, FLOW_MAGIC)?;
    let n = w as u64 * h as u64;
    need(bytes, HEADER_LEN as u64 + 8 * n)?;
    let vals: Vec<f64> = f32s(&bytes[HEADER_LEN..HEADER_LEN + 8 * n as usize]).collect();
    let data = vals.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    FlowImage::new(w, h, data).map_err(|e| IoError::InvalidValue(e.to_string()))
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowImage) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_flow(flow))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowImage, IoError> {
    decode_flow(&read_bytes(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadarLine {
    t: f64,
    sensor_from_world: Vec<f64>,
    points: Vec<[f64; 4]>,
}

/// One frame as a canonical JSON line (no trailing newline).
pub fn radar_frame_to_line(frame: &RadarFrame) -> String {
    let line = RadarLine {
        t: frame.timestamp,
        sensor_from_world: frame.sensor_from_world.to_row_major().to_vec(),
        points: frame
            .points
            .iter()
            .map(|p| [p.position.x, p.position.y, p.position.z, p.radial_velocity])
            .collect(),
    };
    serde_json::to_string(&line).expect("radar line serializes")
}

/// Parses one JSON line; `line` is 1-based and only used in errors.
pub fn parse_radar_line(text: &str, line: usize) -> Result<RadarFrame, IoError> {
    let perr = |message: String| IoError::ParseError { line, message };
    let raw: RadarLine = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
    if !raw.t.is_finite() {
        return Err(perr("non-finite timestamp".into()));
    }
    let m: [f64; 16] = raw.sensor_from_world.as_slice().try_into().map_err(|_| {
        perr(format!(
            "sensor_from_world has {} entries, need 16",
            raw.sensor_from_world.len()
        ))
    })?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(perr("non-finite sensor_from_world".into()));
    }
    let pose = RigidTransform::from_row_major(&m)
        .ok_or_else(|| perr("sensor_from_world is not a rigid transform".into()))?;
    let points = raw
        .points
        .iter()
        .enumerate()
        .map(|(k, [x, y, z, vr])| {
            RadarPoint::new(Vec3::new(*x, *y, *z), *vr).map_err(|e| perr(format!("point {k}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(RadarFrame::new(raw.t, pose, points))
}

pub fn write_radar_to(mut w: impl Write, frames: &[RadarFrame]) -> std::io::Result<()> {
    for f in frames {
        writeln!(w, "{}", radar_frame_to_line(f))?;
    }
    w.flush()
}

/// Reads JSON Lines radar frames; blank lines are skipped.
pub fn read_radar_from(r: impl BufRead) -> Result<Vec<RadarFrame>, IoError> {
    let mut frames: Vec<RadarFrame> = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let text = line.map_err(|e| IoError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let frame = parse_radar_line(&text, line_no)?;
        if let Some(prev) = frames.last() {
            if !(frame.timestamp > prev.timestamp) {
                return Err(IoError::NonMonotonicTimestamps {
                    line: line_no,
                    prev: prev.timestamp,
                    next: frame.timestamp,
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_radar(path: impl AsRef<Path>, frames: &[RadarFrame]) -> Result<(), IoError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(io_err(path))?;
    write_radar_to(BufWriter::new(f), frames).map_err(io_err(path))
}

pub fn read_radar(path: impl AsRef<Path>) -> Result<Vec<RadarFrame>, IoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    read_radar_from(BufReader::new(f))
}

pub fn encode_mask(mask: &DynamicMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    out
}

/// Binary PGM with maxval ≤ 255; any nonzero pixel is dynamic.
pub fn decode_mask(bytes: &[u8]) -> Result<DynamicMask, IoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(IoError::BadMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::InvalidValue("malformed PGM header".into()));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| IoError::InvalidValue("PGM header value out of range".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(IoError::InvalidValue(format!("PGM maxval {maxval}")));
    }
    if w > u32::MAX as u64 || h > u32::MAX as u64 || w * h > MAX_PIXELS {
        return Err(IoError::DimensionOverflow {
            width: w.min(u32::MAX as u64) as u32,
            height: h.min(u32::MAX as u64) as u32,
        });
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = (w * h) as usize;
    need(bytes, (pos + n) as u64)?;
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&v| (v != 0) as u8)
        .collect();
    DynamicMask::new(w as u32, h as u32, data).map_err(|e| IoError::InvalidValue(e.to_string()))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &DynamicMask) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_mask(mask))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<DynamicMask, IoError> {
    decode_mask(&read_bytes(path.as_ref())?)
}

/// ASCII PLY with `x y z` and, when `radial_velocity` is given, `vr`.
pub fn write_ply_to(
    mut w: impl Write,
    points: &[Vec3],
    radial_velocity: Option<&[f64]>,
) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if radial_velocity.is_some() {
        writeln!(w, "property double vr")?;
    }
    writeln!(w, "end_header")?;
    for (k, p) in points.iter().enumerate() {
        match radial_velocity {
            Some(vr) => writeln!(w, "{} {} {} {}", p.x, p.y, p.z, vr[k])?,
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()
}

pub fn write_ply(
    path: impl AsRef<Path>,
    points: &[Vec3],
    radial_velocity: Option<&[f64]>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    if let Some(vr) = radial_velocity {
        if vr.len() != points.len() {
            return Err(IoError::InvalidValue(format!(
                "{} velocities for {} points",
                vr.len(),
                points.len()
            )));
        }
    }
    let f = File::create(path).map_err(io_err(path))?;
    write_ply_to(BufWriter::new(f), points, radial_velocity).map_err(io_err(path))
}

/// One JSON value per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), IoError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for it in items {
        let s = serde_json::to_string(it).map_err(|e| IoError::InvalidValue(e.to_string()))?;
        writeln!(w, "{s}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let text = line.map_err(io_err(path))?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&text).map_err(|e| IoError::ParseError {
                line: k + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[SceneFlowSample]) -> Result<(), IoError> {
    write_jsonl(path, samples)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<SceneFlowSample>, IoError> {
    read_jsonl(path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| IoError::InvalidValue(e.to_string()))?;
    s.push('\n');
    write_bytes(path.as_ref(), s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| IoError::ParseError {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}
