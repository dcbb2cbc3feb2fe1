// SPDX-License-Identifier: Apache-2.0

//! Affine coupling field.
//!
//! Each layer rescales and shifts one active coordinate conditioned on the two
//! passive coordinates and a sinusoidal time embedding:
//!
//! ```text
//! y_a = x_a · exp(s) + shift,   s = bound · tanh(raw)
//! x_a = (y_a − shift) · exp(−s)
//! ```
//!
//! The active axis cycles x, y, z over layers. The conditioner is a
//! two-hidden-layer tanh MLP. Coordinates are normalised by a frozen centre
//! and radius before entering the stack.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{radial_residual, LossWeights, MIN_RADAR_SEPARATION};
use super::{DeformError, DeformationField, TimeRange};
use crate::flow_lift::SceneFlowSample;
use crate::geometry::Vec3;

/// Samples per parallel work item. Fixed, so reductions are identical for
/// every thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldArchitecture {
    pub num_layers: usize,
    pub hidden: usize,
    /// Number of (sin, cos) frequency pairs in the time embedding.
    pub frequencies: usize,
    /// `α` in `s = α · tanh(raw)`.
    pub log_scale_bound: f64,
}

impl Default for FieldArchitecture {
    fn default() -> Self {
        Self {
            num_layers: 6,
            hidden: 64,
            frequencies: 4,
            log_scale_bound: 2.0,
        }
    }
}

impl FieldArchitecture {
    pub fn input_dim(&self) -> usize {
        2 + 2 * self.frequencies
    }

    pub fn layer_params(&self) -> usize {
        let (h, i) = (self.hidden, self.input_dim());
        h * i + h + h * h + h + 2 * h + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub center: Vec3,
    pub radius: f64,
}

impl Normalization {
    /// Bounding-box centre and half of the largest extent.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if !lo.x.is_finite() {
            return Self {
                center: Vec3::zeros(),
                radius: 1.0,
            };
        }
        Self {
            center: (lo + hi) / 2.0,
            radius: ((hi - lo).max() / 2.0).max(1e-3),
        }
    }

    pub fn from_samples(samples: &[SceneFlowSample]) -> Self {
        Self::from_points(samples.iter().flat_map(|s| [&s.x_ti, &s.x_tj]))
    }
}

/// Conditioner weights for one layer. Matrices are row-major:
/// `w1` is `hidden × input`, `w2` is `hidden × hidden`, `w3` is `2 × hidden`
/// (row 0 → raw log-scale, row 1 → shift).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingLayer {
    pub active_axis: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl CouplingLayer {
    fn zeros(arch: &FieldArchitecture, active_axis: usize) -> Self {
        let (h, i) = (arch.hidden, arch.input_dim());
        Self {
            active_axis,
            w1: vec![0.0; h * i],
            b1: vec![0.0; h],
            w2: vec![0.0; h * h],
            b2: vec![0.0; h],
            w3: vec![0.0; 2 * h],
            b3: vec![0.0; 2],
        }
    }

    fn blocks(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

fn passive_axes(active: usize) -> [usize; 2] {
    match active {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

fn embed_into(t: f64, out: &mut [f64]) {
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let w = (1u64 << k) as f64 * std::f64::consts::PI * t;
        pair[0] = w.sin();
        pair[1] = w.cos();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingField {
    pub architecture: FieldArchitecture,
    pub normalization: Normalization,
    pub time_range: TimeRange,
    pub layers: Vec<CouplingLayer>,
}

/// Which way a layer is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Forward,
    Inverse,
}

/// Dense per-layer matrices for batched evaluation.
struct LayerMats {
    axis: usize,
    w1: DMatrix<f64>,
    w1t: DMatrix<f64>,
    b1: Vec<f64>,
    w2: DMatrix<f64>,
    w2t: DMatrix<f64>,
    b2: Vec<f64>,
    w3: DMatrix<f64>,
    w3t: DMatrix<f64>,
    b3: [f64; 2],
}

/// Activations kept from one layer application for backprop.
struct OpCache {
    layer: usize,
    dir: Dir,
    input: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    tanh_raw: DVector<f64>,
    /// `exp(s)` for forward, `exp(−s)` for inverse.
    factor: DVector<f64>,
    /// Forward: the active input; inverse: the active output.
    active: DVector<f64>,
}

fn add_bias_cols(m: &mut DMatrix<f64>, b: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
}

fn tanh_in_place(m: &mut DMatrix<f64>) {
    m.apply(|v| *v = v.tanh());
}

impl CouplingField {
    /// Xavier-normal hidden weights and a zero output layer, so a new field is
    /// the identity.
    pub fn new(
        architecture: FieldArchitecture,
        normalization: Normalization,
        time_range: TimeRange,
        seed: u64,
    ) -> Self {
        let mut f = Self::zeros(architecture, normalization, time_range);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, i) = (architecture.hidden, architecture.input_dim());
        let n1 = Normal::new(0.0, (2.0 / (h + i) as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).unwrap();
        for layer in &mut f.layers {
            layer.w1.iter_mut().for_each(|w| *w = n1.sample(&mut rng));
            layer.w2.iter_mut().for_each(|w| *w = n2.sample(&mut rng));
        }
        f
    }

    pub fn zeros(
        architecture: FieldArchitecture,
        normalization: Normalization,
        time_range: TimeRange,
    ) -> Self {
        Self {
            architecture,
            normalization,
            time_range,
            layers: (0..architecture.num_layers)
                .map(|l| CouplingLayer::zeros(&architecture, l % 3))
                .collect(),
        }
    }

    /// Every parameter drawn from `N(0, std)`; used for fuzzing.
    pub fn random(
        architecture: FieldArchitecture,
        normalization: Normalization,
        time_range: TimeRange,
        std: f64,
        seed: u64,
    ) -> Self {
        let mut f = Self::zeros(architecture, normalization, time_range);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, std).unwrap();
        let mut p = f.params();
        p.iter_mut().for_each(|v| *v = n.sample(&mut rng));
        f.set_params(&p).unwrap();
        f
    }

    pub fn num_params(&self) -> usize {
        self.layers.len() * self.architecture.layer_params()
    }

    /// Flat parameter vector: per layer `w1, b1, w2, b2, w3, b3`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for b in l.blocks() {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), DeformError> {
        if p.len() != self.num_params() {
            return Err(DeformError::ParameterCount {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            for b in l.blocks_mut() {
                let n = b.len();
                b.copy_from_slice(&p[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Checks block sizes and axes, e.g. after deserialising.
    pub fn validate(&self) -> Result<(), DeformError> {
        let a = &self.architecture;
        if a.num_layers != self.layers.len() || a.hidden == 0 || !(a.log_scale_bound > 0.0) {
            return Err(DeformError::InvalidField("architecture mismatch".into()));
        }
        if !(self.normalization.radius > 0.0) {
            return Err(DeformError::InvalidField("radius must be positive".into()));
        }
        let fresh = CouplingLayer::zeros(a, 0);
        for (k, l) in self.layers.iter().enumerate() {
            if l.active_axis != k % 3 {
                return Err(DeformError::InvalidField(format!("layer {k} axis")));
            }
            for (got, want) in l.blocks().iter().zip(fresh.blocks()) {
                if got.len() != want.len() {
                    return Err(DeformError::InvalidField(format!("layer {k} block size")));
                }
            }
        }
        Ok(())
    }

    fn normalize(&self, x: &Vec3) -> Vec3 {
        (x - self.normalization.center) / self.normalization.radius
    }

    fn denormalize(&self, y: &Vec3) -> Vec3 {
        y * self.normalization.radius + self.normalization.center
    }

    /// `(s, shift)` for one point.
    fn condition(&self, layer: &CouplingLayer, p0: f64, p1: f64, emb: &[f64]) -> (f64, f64) {
        let a = &self.architecture;
        let (h, ni) = (a.hidden, a.input_dim());
        let mut input = Vec::with_capacity(ni);
        input.push(p0);
        input.push(p1);
        input.extend_from_slice(emb);
        let h1: Vec<f64> = (0..h)
            .map(|j| {
                let row = &layer.w1[j * ni..(j + 1) * ni];
                (layer.b1[j] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let h2: Vec<f64> = (0..h)
            .map(|j| {
                let row = &layer.w2[j * h..(j + 1) * h];
                (layer.b2[j] + row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let raw = layer.b3[0]
            + layer.w3[..h]
                .iter()
                .zip(&h2)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        let shift = layer.b3[1]
            + layer.w3[h..]
                .iter()
                .zip(&h2)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        (a.log_scale_bound * raw.tanh(), shift)
    }

    fn embedding(&self, t: f64) -> Vec<f64> {
        let mut e = vec![0.0; 2 * self.architecture.frequencies];
        embed_into(t, &mut e);
        e
    }

    /// Layer stack on normalised coordinates.
    fn stack_forward(&self, x: &Vec3, t: f64) -> Vec3 {
        let emb = self.embedding(t);
        let mut v = *x;
        for layer in &self.layers {
            let [p, q] = passive_axes(layer.active_axis);
            let (s, sh) = self.condition(layer, v[p], v[q], &emb);
            v[layer.active_axis] = v[layer.active_axis] * s.exp() + sh;
        }
        v
    }

    /// Inverse layer stack on normalised coordinates.
    fn stack_inverse(&self, y: &Vec3, t: f64) -> Vec3 {
        let emb = self.embedding(t);
        let mut v = *y;
        for layer in self.layers.iter().rev() {
            let [p, q] = passive_axes(layer.active_axis);
            let (s, sh) = self.condition(layer, v[p], v[q], &emb);
            v[layer.active_axis] = (v[layer.active_axis] - sh) * (-s).exp();
        }
        v
    }

    /// Canonical positions of the sample sources, `D_{t_i}⁻¹(x_ti)`.
    pub fn canonical_points(&self, samples: &[SceneFlowSample]) -> Vec<Vec3> {
        samples
            .iter()
            .map(|s| self.inverse(&s.x_ti, self.time_range.normalize(s.t_i)))
            .collect()
    }

    fn layer_mats(&self) -> Vec<LayerMats> {
        let a = &self.architecture;
        let (h, ni) = (a.hidden, a.input_dim());
        self.layers
            .iter()
            .map(|l| {
                let w1 = DMatrix::from_row_slice(h, ni, &l.w1);
                let w2 = DMatrix::from_row_slice(h, h, &l.w2);
                let w3 = DMatrix::from_row_slice(2, h, &l.w3);
                LayerMats {
                    axis: l.active_axis,
                    w1t: w1.transpose(),
                    w2t: w2.transpose(),
                    w3t: w3.transpose(),
                    w1,
                    w2,
                    w3,
                    b1: l.b1.clone(),
                    b2: l.b2.clone(),
                    b3: [l.b3[0], l.b3[1]],
                }
            })
            .collect()
    }

    /// One layer over a batch. `coords` is `n × 3`, normalised; `emb` is
    /// `n × 2L`.
    fn apply_op(
        &self,
        mats: &LayerMats,
        layer: usize,
        dir: Dir,
        coords: &mut DMatrix<f64>,
        emb: &DMatrix<f64>,
        keep: bool,
    ) -> Option<OpCache> {
        let n = coords.nrows();
        let ni = self.architecture.input_dim();
        let [p, q] = passive_axes(mats.axis);
        let mut input = DMatrix::zeros(n, ni);
        input.column_mut(0).copy_from(&coords.column(p));
        input.column_mut(1).copy_from(&coords.column(q));
        input.columns_mut(2, ni - 2).copy_from(emb);

        let mut h1 = &input * &mats.w1t;
        add_bias_cols(&mut h1, &mats.b1);
        tanh_in_place(&mut h1);
        let mut h2 = &h1 * &mats.w2t;
        add_bias_cols(&mut h2, &mats.b2);
        tanh_in_place(&mut h2);
        let out = &h2 * &mats.w3t;

        let bound = self.architecture.log_scale_bound;
        let tanh_raw = out.column(0).map(|o| (o + mats.b3[0]).tanh());
        let shift = out.column(1).map(|o| o + mats.b3[1]);
        let a = mats.axis;
        let (factor, active) = match dir {
            Dir::Forward => {
                let f = tanh_raw.map(|th| (bound * th).exp());
                let x_in = coords.column(a).clone_owned();
                for r in 0..n {
                    coords[(r, a)] = x_in[r] * f[r] + shift[r];
                }
                (f, x_in)
            }
            Dir::Inverse => {
                let f = tanh_raw.map(|th| (-bound * th).exp());
                for r in 0..n {
                    coords[(r, a)] = (coords[(r, a)] - shift[r]) * f[r];
                }
                (f, coords.column(a).clone_owned())
            }
        };
        keep.then_some(OpCache {
            layer,
            dir,
            input,
            h1,
            h2,
            tanh_raw,
            factor,
            active,
        })
    }

    fn embedding_matrix(&self, times: &[f64]) -> DMatrix<f64> {
        let l2 = 2 * self.architecture.frequencies;
        let mut m = DMatrix::zeros(times.len(), l2);
        let mut buf = vec![0.0; l2];
        for (r, t) in times.iter().enumerate() {
            embed_into(*t, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        m
    }

    /// Batched warp on normalised coordinates.
    fn warp_normalized(
        &self,
        mats: &[LayerMats],
        coords: &mut DMatrix<f64>,
        t_is: &[f64],
        t_js: &[f64],
        keep: bool,
    ) -> Vec<OpCache> {
        let emb_i = self.embedding_matrix(t_is);
        let emb_j = self.embedding_matrix(t_js);
        let mut caches = Vec::new();
        for l in (0..mats.len()).rev() {
            caches.extend(self.apply_op(&mats[l], l, Dir::Inverse, coords, &emb_i, keep));
        }
        for (l, m) in mats.iter().enumerate() {
            caches.extend(self.apply_op(m, l, Dir::Forward, coords, &emb_j, keep));
        }
        caches
    }

    /// Reverse pass. `grad` is `dL/d(output coords)`, normalised, `n × 3`.
    /// Accumulates into the flat parameter gradient `out`.
    fn backprop(
        &self,
        mats: &[LayerMats],
        caches: &[OpCache],
        mut grad: DMatrix<f64>,
        out: &mut [f64],
    ) {
        let a = &self.architecture;
        let (h, ni) = (a.hidden, a.input_dim());
        let lp = a.layer_params();
        let bound = a.log_scale_bound;
        let n = grad.nrows();
        for c in caches.iter().rev() {
            let m = &mats[c.layer];
            let ax = m.axis;
            let [p, q] = passive_axes(ax);
            let mut d_out = DMatrix::zeros(n, 2);
            for r in 0..n {
                let g = grad[(r, ax)];
                let (ds, dsh, gin) = match c.dir {
                    Dir::Forward => (g * c.active[r] * c.factor[r], g, g * c.factor[r]),
                    Dir::Inverse => (-g * c.active[r], -g * c.factor[r], g * c.factor[r]),
                };
                d_out[(r, 0)] = ds * bound * (1.0 - c.tanh_raw[r] * c.tanh_raw[r]);
                d_out[(r, 1)] = dsh;
                grad[(r, ax)] = gin;
            }
            let base = c.layer * lp;
            let (o_w1, o_b1) = (base, base + h * ni);
            let o_w2 = o_b1 + h;
            let o_b2 = o_w2 + h * h;
            let o_w3 = o_b2 + h;
            let o_b3 = o_w3 + 2 * h;

            let gw3 = d_out.transpose() * &c.h2;
            for i in 0..2 {
                for j in 0..h {
                    out[o_w3 + i * h + j] += gw3[(i, j)];
                }
                out[o_b3 + i] += d_out.column(i).sum();
            }
            let mut dz2 = &d_out * &m.w3;
            dz2.zip_apply(&c.h2, |d, hv| *d *= 1.0 - hv * hv);
            let gw2 = dz2.transpose() * &c.h1;
            for i in 0..h {
                for j in 0..h {
                    out[o_w2 + i * h + j] += gw2[(i, j)];
                }
                out[o_b2 + i] += dz2.column(i).sum();
            }
            let mut dz1 = &dz2 * &m.w2;
            dz1.zip_apply(&c.h1, |d, hv| *d *= 1.0 - hv * hv);
            let gw1 = dz1.transpose() * &c.input;
            for i in 0..h {
                for j in 0..ni {
                    out[o_w1 + i * ni + j] += gw1[(i, j)];
                }
                out[o_b1 + i] += dz1.column(i).sum();
            }
            let dpass = &dz1 * m.w1.columns(0, 2);
            for r in 0..n {
                grad[(r, p)] += dpass[(r, 0)];
                grad[(r, q)] += dpass[(r, 1)];
            }
        }
    }

    fn chunk_times(&self, samples: &[SceneFlowSample]) -> (Vec<f64>, Vec<f64>) {
        samples
            .iter()
            .map(|s| {
                (
                    self.time_range.normalize(s.t_i),
                    self.time_range.normalize(s.t_j),
                )
            })
            .unzip()
    }

    fn normalized_matrix(&self, xs: impl Iterator<Item = Vec3>, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, 3);
        for (r, x) in xs.enumerate() {
            let v = self.normalize(&x);
            for c in 0..3 {
                m[(r, c)] = v[c];
            }
        }
        m
    }

    /// Loss terms and optional gradient for one chunk.
    fn chunk_objective(
        &self,
        mats: &[LayerMats],
        samples: &[SceneFlowSample],
        weights: &LossWeights,
        want_grad: bool,
    ) -> (f64, f64, Option<Vec<f64>>) {
        let n = samples.len();
        let (t_is, t_js) = self.chunk_times(samples);
        let mut coords = self.normalized_matrix(samples.iter().map(|s| s.x_ti), n);
        let caches = self.warp_normalized(mats, &mut coords, &t_is, &t_js, want_grad);
        let r = self.normalization.radius;
        // The flow residual is formed in normalised coordinates so an identity
        // field on identical endpoints gives exactly zero.
        let mut lf = 0.0;
        let mut lr = 0.0;
        let mut g = DMatrix::zeros(n, 3);
        for (k, s) in samples.iter().enumerate() {
            let y_n = Vec3::new(coords[(k, 0)], coords[(k, 1)], coords[(k, 2)]);
            let y = self.denormalize(&y_n);
            let e = (y_n - self.normalize(&s.x_tj)) * r;
            lf += e.norm_squared();
            let mut dy = e * (2.0 * weights.flow);
            if let Some(vr) = s.radial_velocity {
                let los = s.x_ti - s.radar_origin;
                if los.norm() > MIN_RADAR_SEPARATION {
                    let (res, u) = radial_residual(s, &y, vr);
                    lr += res.abs();
                    let sign = if res > 0.0 {
                        1.0
                    } else if res < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dy += s.t_j_to_i.rotation.transpose() * u * (sign * weights.rad);
                }
            }
            for c in 0..3 {
                g[(k, c)] = dy[c] * r;
            }
        }
        let grad = want_grad.then(|| {
            let mut out = vec![0.0; self.num_params()];
            self.backprop(mats, &caches, g, &mut out);
            out
        });
        (lf, lr, grad)
    }

    /// `(L_flow, L_rad, gradient of λ_flow·L_flow + λ_rad·L_rad)`.
    ///
    /// The radial term covers samples with a radial velocity whose point is
    /// more than `MIN_RADAR_SEPARATION` from the radar origin. Chunks run in
    /// parallel and are reduced in a fixed pairwise order.
    pub fn loss_and_gradient(
        &self,
        samples: &[SceneFlowSample],
        weights: &LossWeights,
    ) -> (f64, f64, Vec<f64>) {
        let (lf, lr, g) = self.objective(samples, weights, true);
        (lf, lr, g.unwrap())
    }

    /// `(L_flow, L_rad)` through the batched path.
    pub fn losses(&self, samples: &[SceneFlowSample]) -> (f64, f64) {
        let (lf, lr, _) = self.objective(samples, &LossWeights::default(), false);
        (lf, lr)
    }

    fn objective(
        &self,
        samples: &[SceneFlowSample],
        weights: &LossWeights,
        want_grad: bool,
    ) -> (f64, f64, Option<Vec<f64>>) {
        if samples.is_empty() {
            return (0.0, 0.0, want_grad.then(|| vec![0.0; self.num_params()]));
        }
        let mats = self.layer_mats();
        let parts: Vec<(f64, f64, Option<Vec<f64>>)> = samples
            .par_chunks(CHUNK)
            .map(|c| self.chunk_objective(&mats, c, weights, want_grad))
            .collect();
        tree_reduce(parts, |a, b| {
            let g = match (a.2, b.2) {
                (Some(mut x), Some(y)) => {
                    x.iter_mut().zip(&y).for_each(|(u, v)| *u += v);
                    Some(x)
                }
                _ => None,
            };
            (a.0 + b.0, a.1 + b.1, g)
        })
    }
}

/// Pairwise reduction in index order: `((p0 + p1) + (p2 + p3)) + ...`.
pub(crate) fn tree_reduce<T>(mut items: Vec<T>, combine: impl Fn(T, T) -> T) -> T {
    assert!(!items.is_empty());
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().unwrap()
}

impl DeformationField for CouplingField {
    fn forward(&self, x: &Vec3, t: f64) -> Vec3 {
        self.denormalize(&self.stack_forward(&self.normalize(x), t))
    }

    fn inverse(&self, y: &Vec3, t: f64) -> Vec3 {
        self.denormalize(&self.stack_inverse(&self.normalize(y), t))
    }

    fn time_range(&self) -> TimeRange {
        self.time_range
    }

    fn warp(&self, x: &Vec3, t_i: f64, t_j: f64) -> Vec3 {
        let canon = self.stack_inverse(&self.normalize(x), t_i);
        self.denormalize(&self.stack_forward(&canon, t_j))
    }

    fn warp_batch(&self, xs: &[Vec3], t_is: &[f64], t_js: &[f64]) -> Vec<Vec3> {
        let mats = self.layer_mats();
        let idx: Vec<usize> = (0..xs.len()).collect();
        idx.par_chunks(CHUNK)
            .flat_map_iter(|c| {
                let lo = c[0];
                let hi = lo + c.len();
                let mut coords = self.normalized_matrix(xs[lo..hi].iter().copied(), c.len());
                self.warp_normalized(&mats, &mut coords, &t_is[lo..hi], &t_js[lo..hi], false);
                (0..c.len())
                    .map(|k| {
                        self.denormalize(&Vec3::new(coords[(k, 0)], coords[(k, 1)], coords[(k, 2)]))
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}
