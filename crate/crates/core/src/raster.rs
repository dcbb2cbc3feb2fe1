// SPDX-License-Identifier: Apache-2.0

//! Dense per-pixel grids: depth, optical flow, and binary masks. All are
//! row-major with `index = row * width + col`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("expected {expected} values for {width}x{height}, got {got}")]
    SizeMismatch {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("invalid raster value at index {index}: {value}")]
    InvalidValue { index: usize, value: f64 },
    #[error("scale factor {0} must be positive")]
    NonPositiveScale(f64),
}

fn check_len(width: u32, height: u32, got: usize) -> Result<(), RasterError> {
    let expected = width as usize * height as usize;
    if expected != got {
        return Err(RasterError::SizeMismatch {
            width,
            height,
            expected,
            got,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleState {
    Relative,
    Metric,
}

/// Z-depth image; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
    pub scale_state: ScaleState,
}

impl DepthImage {
    pub fn new(
        width: u32,
        height: u32,
        data: Vec<f64>,
        scale_state: ScaleState,
    ) -> Result<Self, RasterError> {
        check_len(width, height, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(RasterError::InvalidValue { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
            scale_state,
        })
    }

    pub fn filled(width: u32, height: u32, value: f64, scale_state: ScaleState) -> Self {
        Self::new(
            width,
            height,
            vec![value; width as usize * height as usize],
            scale_state,
        )
        .expect("filled depth image")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    /// Depth at a pixel if in bounds and valid.
    pub fn valid_at(&self, col: i64, row: i64) -> Option<f64> {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return None;
        }
        let d = self.get(col as u32, row as u32);
        (d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// Multiplies every valid pixel by `s` and marks the result metric.
    pub fn apply_scale(&self, s: f64) -> Result<DepthImage, RasterError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(RasterError::NonPositiveScale(s));
        }
        Ok(DepthImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| d * s).collect(),
            scale_state: ScaleState::Metric,
        })
    }
}

/// Per-pixel `(du, dv)` displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowImage {
    width: u32,
    height: u32,
    data: Vec<[f64; 2]>,
}

impl FlowImage {
    pub fn new(width: u32, height: u32, data: Vec<[f64; 2]>) -> Result<Self, RasterError> {
        check_len(width, height, data.len())?;
        if let Some((index, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(RasterError::InvalidValue {
                index,
                value: if v[0].is_finite() { v[1] } else { v[0] },
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> [f64; 2] {
        self.data[row as usize * self.width as usize + col as usize]
    }
}

/// Binary mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl DynamicMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        check_len(width, height, data.len())?;
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(RasterError::InvalidValue {
                index,
                value: v as f64,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize] == 1
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        self.data[row as usize * self.width as usize + col as usize] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }
}
