//! 2D constant-density acoustic finite-difference modeling.
//!
//! The scheme is second order in time and fourth order in space:
//!
//! ```text
//! p[n+1] = 2 p[n] - p[n-1] + (v dt / dx)^2 * L4(p[n]) + dt^2 v_s^2 w(t_n) delta_s
//! ```
//!
//! where `L4` is the 4th-order five-point-per-axis Laplacian stencil (in
//! cell units). The velocity model is padded on every absorbing side by
//! the sponge width, replicating edge velocities, and the padded band
//! damps the field with Cerjan's exponential taper after every step. All
//! source and receiver positions are given in model cells, so they can
//! never fall inside the sponge.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::ensure;
use crate::grid::Grid2D;
use crate::nn::Tensor4;
use crate::{Error, Result};

/// Fourth-order second-derivative coefficients: center, +-1, +-2.
pub const STENCIL: [f64; 3] = [-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
/// Sum of absolute stencil coefficients.
pub const STENCIL_ABS_SUM: f64 = 5.0 / 2.0 + 2.0 * (4.0 / 3.0) + 2.0 * (1.0 / 12.0);
/// Fraction of the CFL limit that [`check_cfl`] accepts.
pub const CFL_SAFETY: f64 = 0.9;

pub const SHOT_MAGIC: &[u8; 4] = b"SGTH";
pub const SHOT_FORMAT_VERSION: u32 = 1;

/// Ricker wavelet centred at `1.5 / f_peak` seconds.
pub fn ricker(t_offset: f64, f_peak: f64) -> f64 {
    let tau = t_offset - ricker_delay(f_peak);
    let a = (PI * f_peak * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Time of the wavelet peak.
pub fn ricker_delay(f_peak: f64) -> f64 {
    1.5 / f_peak
}

/// Outcome of [`check_cfl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflCheck {
    pub passes: bool,
    pub max_stable_dt: f64,
}

/// Largest stable time step for a model whose fastest velocity is `v_max`.
pub fn max_stable_dt(dx: f64, v_max: f64) -> f64 {
    CFL_SAFETY * dx / (v_max * std::f64::consts::SQRT_2 * STENCIL_ABS_SUM)
}

pub fn check_cfl(model: &Grid2D, dt: f64) -> CflCheck {
    let (_, v_max) = model.min_max();
    let bound = max_stable_dt(model.dx() as f64, v_max as f64);
    CflCheck {
        passes: dt > 0.0 && dt <= bound,
        max_stable_dt: bound,
    }
}

/// Absorbing boundary parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpongeConfig {
    /// Sponge thickness in cells, added outside the model.
    pub width: usize,
    /// Cerjan damping coefficient.
    pub decay: f64,
    /// Pressure-release top boundary instead of a sponge.
    pub free_surface_top: bool,
}

impl Default for SpongeConfig {
    fn default() -> Self {
        Self {
            width: 20,
            decay: 0.0053,
            free_surface_top: false,
        }
    }
}

impl SpongeConfig {
    pub fn validate(&self, nx: usize, nz: usize) -> Result<()> {
        ensure!(
            self.width < nx.min(nz).div_ceil(2),
            "sponge width {} must be below min(nx, nz)/2 = {}",
            self.width,
            nx.min(nz) / 2
        );
        ensure!(
            self.decay >= 0.0 && self.decay.is_finite(),
            "sponge decay must be >= 0"
        );
        Ok(())
    }

    /// Damping factor `d` cells deep into the sponge (`d` in `1..=width`).
    fn taper(&self, d: usize) -> f64 {
        (-(self.decay * d as f64).powi(2)).exp()
    }
}

/// Sources, receivers and time sampling for one survey. Positions are
/// `(x, z)` model cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionGeometry {
    pub source_positions: Vec<(usize, usize)>,
    pub receiver_positions: Vec<(usize, usize)>,
    /// Seconds.
    pub dt: f64,
    pub nt: usize,
    /// Ricker peak frequency (Hz).
    pub f_peak: f64,
    #[serde(default = "one")]
    pub source_amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl AcquisitionGeometry {
    pub fn n_shots(&self) -> usize {
        self.source_positions.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receiver_positions.len()
    }

    pub fn validate(&self, nx: usize, nz: usize) -> Result<()> {
        ensure!(!self.source_positions.is_empty(), "no source positions");
        ensure!(!self.receiver_positions.is_empty(), "no receiver positions");
        for &(x, z) in self.source_positions.iter().chain(&self.receiver_positions) {
            ensure!(x < nx && z < nz, "position ({x}, {z}) lies outside the {nx}x{nz} model");
        }
        ensure!(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive");
        ensure!(self.nt > 0, "nt must be positive");
        ensure!(self.f_peak > 0.0 && self.f_peak.is_finite(), "f_peak must be positive");
        ensure!(self.source_amplitude.is_finite(), "source amplitude must be finite");
        Ok(())
    }

    /// Source wavelet sampled at `t = n dt`.
    pub fn wavelet(&self) -> Vec<f64> {
        (0..self.nt)
            .map(|n| self.source_amplitude * ricker(n as f64 * self.dt, self.f_peak))
            .collect()
    }
}

/// Compact survey description that expands into an [`AcquisitionGeometry`]
/// for a given model size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub n_shots: usize,
    /// Receivers per shot, spread evenly across the surface. `None` places
    /// one receiver in every column.
    pub n_receivers: Option<usize>,
    /// Cells below the top edge.
    pub source_depth: usize,
    pub receiver_depth: usize,
    pub f_peak: f64,
    /// Time step; `None` uses the CFL bound of the fastest admissible
    /// velocity.
    pub dt: Option<f64>,
    /// Record length in seconds; `None` records the two-way vertical
    /// travel time at the slowest velocity.
    pub record_seconds: Option<f64>,
    pub sponge: SpongeConfig,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_shots: 8,
            n_receivers: None,
            source_depth: 2,
            receiver_depth: 2,
            f_peak: 15.0,
            dt: None,
            record_seconds: None,
            sponge: SpongeConfig::default(),
        }
    }
}

/// `count` positions spread evenly over `0..n`, at cell centres of equal
/// bins.
fn spread(count: usize, n: usize) -> Vec<usize> {
    (0..count)
        .map(|i| (((2 * i + 1) * n) / (2 * count)).min(n - 1))
        .collect()
}

impl AcquisitionConfig {
    /// Geometry for an `nx` x `nz` model with cell size `dx` whose
    /// velocities lie in `[v_floor, v_ceil]`.
    pub fn geometry(
        &self,
        nx: usize,
        nz: usize,
        dx: f64,
        v_floor: f64,
        v_ceil: f64,
    ) -> Result<AcquisitionGeometry> {
        ensure!(self.n_shots >= 1, "n_shots must be at least 1");
        ensure!(
            self.n_shots <= nx,
            "{} shots do not fit across {nx} columns",
            self.n_shots
        );
        let n_rec = self.n_receivers.unwrap_or(nx);
        ensure!(
            (1..=nx).contains(&n_rec),
            "n_receivers must lie in 1..={nx}, got {n_rec}"
        );
        ensure!(v_floor > 0.0 && v_floor < v_ceil, "invalid velocity bounds");
        let dt = self.dt.unwrap_or_else(|| max_stable_dt(dx, v_ceil));
        let record = self
            .record_seconds
            .unwrap_or(2.0 * nz as f64 * dx / v_floor);
        ensure!(record > 0.0, "record length must be positive");
        let nt = (record / dt).ceil() as usize;
        let geometry = AcquisitionGeometry {
            source_positions: spread(self.n_shots, nx)
                .into_iter()
                .map(|x| (x, self.source_depth))
                .collect(),
            receiver_positions: spread(n_rec, nx)
                .into_iter()
                .map(|x| (x, self.receiver_depth))
                .collect(),
            dt,
            nt,
            f_peak: self.f_peak,
            source_amplitude: 1.0,
        };
        geometry.validate(nx, nz)?;
        self.sponge.validate(nx, nz)?;
        Ok(geometry)
    }
}

/// Pressure recorded at every receiver for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotGather {
    pub shot_index: usize,
    pub n_receivers: usize,
    pub nt: usize,
    pub dt: f64,
    /// Receiver-major: trace `r` occupies `data[r*nt .. (r+1)*nt]`.
    pub data: Vec<f32>,
}

impl ShotGather {
    pub fn trace(&self, receiver: usize) -> &[f32] {
        &self.data[receiver * self.nt..(receiver + 1) * self.nt]
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.data.len() == self.n_receivers * self.nt,
            "gather holds {} samples, expected {}x{}",
            self.data.len(),
            self.n_receivers,
            self.nt
        );
        ensure!(self.n_receivers > 0 && self.nt > 0, "empty gather");
        ensure!(
            self.data.iter().all(|v| v.is_finite()),
            "gather {} contains non-finite samples",
            self.shot_index
        );
        Ok(())
    }
}

/// Explicit time stepper over the sponge-padded domain.
///
/// The field arrays carry a two-cell zero halo so the stencil needs no
/// boundary branches; the halo acts as a pressure-release edge.
pub struct Propagator {
    /// Padded domain size (without halo).
    width: usize,
    height: usize,
    stride: usize,
    /// Offsets of model cell (0, 0) inside the padded domain.
    pad_left: usize,
    pad_top: usize,
    /// `(v dt / dx)^2` per padded cell, in halo layout.
    courant2: Vec<F>,
    /// Sponge taper per padded cell, in halo layout; 1 outside the sponge.
    taper: Vec<F>,
    /// Rows `(row, all_sponge)` requiring damping.
    damped_rows: Vec<(usize, bool)>,
    sponge_width: usize,
    prev: Vec<F>,
    cur: Vec<F>,
    next: Vec<F>,
    velocity: Vec<f32>,
    dt: f64,
    steps: usize,
}

const HALO: usize = 2;

/// Wavefield precision. Single precision accumulates enough rounding over
/// thousands of leapfrog steps (~5e-6 relative) to break exact reciprocity
/// and linearity checks; double precision keeps them near 1e-16.
type F = f64;

/// Magnitudes below this are stored as zero. The leading edge of the
/// discrete wavefront otherwise fills the grid with subnormal floats, which
/// are several times slower to process on common hardware.
const FLUSH_TO_ZERO: F = 1e-30;

impl Propagator {
    pub fn new(model: &Grid2D, dt: f64, sponge: &SpongeConfig) -> Result<Self> {
        model.validate()?;
        sponge.validate(model.nx(), model.nz())?;
        ensure!(dt > 0.0 && dt.is_finite(), "dt must be positive");
        let w = sponge.width;
        let pad_left = w;
        let pad_top = if sponge.free_surface_top { 0 } else { w };
        let width = model.nx() + 2 * w;
        let height = model.nz() + pad_top + w;
        let stride = width + 2 * HALO;
        let len = stride * (height + 2 * HALO);

        let dx = model.dx() as f64;
        let mut courant2: Vec<F> = vec![0.0; len];
        let mut taper: Vec<F> = vec![1.0; len];
        let mut velocity = vec![0.0f32; len];
        for row in 0..height {
            let mz = row.saturating_sub(pad_top).min(model.nz() - 1);
            let dz = if row < pad_top {
                pad_top - row
            } else if row >= pad_top + model.nz() {
                row + 1 - (pad_top + model.nz())
            } else {
                0
            };
            for col in 0..width {
                let mx = col.saturating_sub(pad_left).min(model.nx() - 1);
                let dxs = if col < pad_left {
                    pad_left - col
                } else if col >= pad_left + model.nx() {
                    col + 1 - (pad_left + model.nx())
                } else {
                    0
                };
                let i = (row + HALO) * stride + col + HALO;
                let v = model.get(mx, mz) as f64;
                velocity[i] = v as f32;
                courant2[i] = (v * dt / dx).powi(2) as F;
                let mut g: F = 1.0;
                if dz > 0 {
                    g *= sponge.taper(dz);
                }
                if dxs > 0 {
                    g *= sponge.taper(dxs);
                }
                taper[i] = g;
            }
        }
        let damped_rows = if w == 0 || sponge.decay == 0.0 {
            Vec::new()
        } else {
            (0..height)
                .map(|row| (row, row < pad_top || row >= pad_top + model.nz()))
                .collect()
        };
        Ok(Self {
            width,
            height,
            stride,
            pad_left,
            pad_top,
            courant2,
            taper,
            damped_rows,
            sponge_width: w,
            prev: vec![0.0; len],
            cur: vec![0.0; len],
            next: vec![0.0; len],
            velocity,
            dt,
            steps: 0,
        })
    }

    #[inline]
    fn index(&self, x: usize, z: usize) -> usize {
        (z + self.pad_top + HALO) * self.stride + x + self.pad_left + HALO
    }

    /// Pressure at model cell `(x, z)` at the current time level.
    pub fn pressure(&self, x: usize, z: usize) -> f32 {
        self.cur[self.index(x, z)] as f32
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Sum of squared pressure over the padded domain.
    pub fn energy(&self) -> f64 {
        self.cur.iter().map(|&p| p * p).sum()
    }

    /// Largest absolute pressure over the padded domain.
    pub fn max_abs(&self) -> f32 {
        self.cur.iter().fold(0.0f32, |m, p| m.max(p.abs() as f32))
    }

    pub fn is_finite(&self) -> bool {
        self.cur.iter().all(|p| p.is_finite())
    }

    /// Advances one step, injecting `amplitude` at model cell `source`.
    pub fn step(&mut self, source: (usize, usize), amplitude: f64) {
        let [c0, c1, c2] = STENCIL.map(|c| c as F);
        let c0 = 2.0 * c0;
        let s = self.stride;
        let w = self.width;
        for row in 0..self.height {
            let o = (row + HALO) * s + HALO;
            let mid = &self.cur[o - 2..o + w + 2];
            let up2 = &self.cur[o - 2 * s..o - 2 * s + w];
            let up1 = &self.cur[o - s..o - s + w];
            let dn1 = &self.cur[o + s..o + s + w];
            let dn2 = &self.cur[o + 2 * s..o + 2 * s + w];
            let prev = &self.prev[o..o + w];
            let k = &self.courant2[o..o + w];
            let out = &mut self.next[o..o + w];
            let (l2, l1, m0, r1, r2) = (&mid[..w], &mid[1..w + 1], &mid[2..w + 2], &mid[3..w + 3], &mid[4..]);
            for x in 0..w {
                let lap = c0 * m0[x]
                    + c1 * ((l1[x] + r1[x]) + (up1[x] + dn1[x]))
                    + c2 * ((l2[x] + r2[x]) + (up2[x] + dn2[x]));
                let p = 2.0 * m0[x] - prev[x] + k[x] * lap;
                out[x] = if p.abs() < FLUSH_TO_ZERO { 0.0 } else { p };
            }
        }

        let si = self.index(source.0, source.1);
        let v = self.velocity[si] as f64;
        self.next[si] += (self.dt * self.dt * v * v * amplitude) as F;

        if !self.damped_rows.is_empty() {
            let sw = self.sponge_width;
            for &(row, full) in &self.damped_rows {
                let o = (row + HALO) * s + HALO;
                let spans: [(usize, usize); 2] = if full {
                    [(o, w), (o, 0)]
                } else {
                    [(o, sw), (o + w - sw, sw)]
                };
                for (start, len) in spans {
                    let g = &self.taper[start..start + len];
                    let nx = &mut self.next[start..start + len];
                    let cu = &mut self.cur[start..start + len];
                    for ((n, c), &t) in nx.iter_mut().zip(cu.iter_mut()).zip(g) {
                        *n *= t;
                        *c *= t;
                    }
                }
            }
        }

        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.steps += 1;
    }
}

/// Steps between full-field finiteness checks.
const BLOWUP_CHECK_INTERVAL: usize = 16;

/// Simulates one shot and records every receiver at `t = n dt`,
/// `n = 0..nt`.
pub fn propagate_shot(
    model: &Grid2D,
    source: (usize, usize),
    geometry: &AcquisitionGeometry,
    sponge: &SpongeConfig,
) -> Result<ShotGather> {
    geometry.validate(model.nx(), model.nz())?;
    ensure!(
        source.0 < model.nx() && source.1 < model.nz(),
        "source ({}, {}) lies outside the model",
        source.0,
        source.1
    );
    let cfl = check_cfl(model, geometry.dt);
    if !cfl.passes {
        return Err(Error::Cfl {
            dt: geometry.dt,
            max_stable_dt: cfl.max_stable_dt,
        });
    }
    let mut prop = Propagator::new(model, geometry.dt, sponge)?;
    let wavelet = geometry.wavelet();
    let nt = geometry.nt;
    let n_rec = geometry.n_receivers();
    let rec_index: Vec<usize> = geometry
        .receiver_positions
        .iter()
        .map(|&(x, z)| prop.index(x, z))
        .collect();
    let mut data = vec![0.0f32; n_rec * nt];
    for (n, &amp) in wavelet.iter().enumerate() {
        for (r, &i) in rec_index.iter().enumerate() {
            data[r * nt + n] = prop.cur[i] as f32;
        }
        prop.step(source, amp);
        if ((n + 1) % BLOWUP_CHECK_INTERVAL == 0 || n + 1 == nt)
            && !prop.is_finite() {
                return Err(Error::NumericalBlowup { step: n + 1 });
            }
    }
    Ok(ShotGather {
        shot_index: 0,
        n_receivers: n_rec,
        nt,
        dt: geometry.dt,
        data,
    })
}

/// One gather per source, in source order. Shots run on up to
/// `available_parallelism` threads; the result does not depend on the
/// schedule.
pub fn simulate_survey(
    model: &Grid2D,
    geometry: &AcquisitionGeometry,
    sponge: &SpongeConfig,
) -> Result<Vec<ShotGather>> {
    geometry.validate(model.nx(), model.nz())?;
    let n = geometry.n_shots();
    let threads = std::thread::available_parallelism()
        .map(|t| t.get())
        .unwrap_or(1)
        .min(n);
    let run = |i: usize| -> Result<ShotGather> {
        let mut g = propagate_shot(model, geometry.source_positions[i], geometry, sponge)
            .map_err(|e| e.in_sample(i))?;
        g.shot_index = i;
        Ok(g)
    };
    if threads <= 1 {
        return (0..n).map(run).collect();
    }
    let mut slots: Vec<Option<Result<ShotGather>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = slots
            .chunks_mut(n.div_ceil(threads))
            .enumerate()
            .map(|(c, chunk)| {
                let base = c * n.div_ceil(threads);
                let run = &run;
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run(base + k));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("shot worker panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

/// Samples `src` (length `n_in`) at `n_out` evenly spaced positions
/// spanning the first to the last sample, by linear interpolation.
fn lerp_resample(src: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = src.len();
    if n_out == n_in {
        return src.to_vec();
    }
    if n_in == 1 || n_out == 1 {
        return vec![src[0]; n_out];
    }
    let scale = (n_in - 1) as f64 / (n_out - 1) as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(n_in - 2);
            let frac = pos - lo as f64;
            src[lo] * (1.0 - frac) + src[lo + 1] * frac
        })
        .collect()
}

/// Stacks gathers into a `1 x n_shots x out_h x out_w` network input: time
/// runs down the rows, receivers across the columns, and each channel is
/// standardized to zero mean and unit variance (constant channels become
/// zeros).
pub fn resample_gather_to_grid(
    gathers: &[ShotGather],
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<f32>> {
    ensure!(!gathers.is_empty(), "no gathers to resample");
    ensure!(out_h > 0 && out_w > 0, "output size must be positive");
    let (n_rec, nt) = (gathers[0].n_receivers, gathers[0].nt);
    for g in gathers {
        g.validate()?;
        if (g.n_receivers, g.nt) != (n_rec, nt) {
            return Err(Error::Validation(format!(
                "gather {} is {}x{}, expected {n_rec}x{nt}",
                g.shot_index, g.n_receivers, g.nt
            )));
        }
    }
    let mut out = Vec::with_capacity(gathers.len() * out_h * out_w);
    for g in gathers {
        // Time first: each receiver trace to out_h samples.
        let traces: Vec<Vec<f64>> = (0..n_rec)
            .map(|r| {
                let t: Vec<f64> = g.trace(r).iter().map(|&v| v as f64).collect();
                lerp_resample(&t, out_h)
            })
            .collect();
        let mut channel = Vec::with_capacity(out_h * out_w);
        for row in 0..out_h {
            let across: Vec<f64> = traces.iter().map(|t| t[row]).collect();
            channel.extend(lerp_resample(&across, out_w));
        }
        let n = channel.len() as f64;
        let mean = channel.iter().sum::<f64>() / n;
        let var = channel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 0.0 && std.is_finite() {
            out.extend(channel.iter().map(|v| ((v - mean) / std) as f32));
        } else {
            out.extend(std::iter::repeat_n(0.0f32, channel.len()));
        }
    }
    Tensor4::new([1, gathers.len(), out_h, out_w], out)
}

/// Serializes gathers as consecutive `SGTH` records.
pub fn encode_shots(gathers: &[ShotGather]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for g in gathers {
        g.validate()?;
        buf.extend_from_slice(SHOT_MAGIC);
        binio::put_u32(&mut buf, SHOT_FORMAT_VERSION);
        binio::put_u32(&mut buf, g.shot_index as u32);
        binio::put_u32(&mut buf, g.n_receivers as u32);
        binio::put_u32(&mut buf, g.nt as u32);
        binio::put_f32(&mut buf, g.dt as f32);
        binio::put_f32s(&mut buf, &g.data);
    }
    Ok(buf)
}

pub fn decode_shots(bytes: &[u8], path: &Path) -> Result<Vec<ShotGather>> {
    let mut r = Reader::new(bytes, path);
    let mut out = Vec::new();
    while !r.is_empty() {
        r.magic(SHOT_MAGIC)?;
        r.version(SHOT_FORMAT_VERSION)?;
        let shot_index = r.u32("shot_index")? as usize;
        let n_receivers = r.u32("n_receivers")? as usize;
        let nt = r.u32("nt")? as usize;
        let dt = r.f32("dt")? as f64;
        let count = n_receivers
            .checked_mul(nt)
            .ok_or_else(|| Error::format(path, "n_receivers*nt overflows"))?;
        let data = r.f32s(count, "shot samples")?;
        let g = ShotGather {
            shot_index,
            n_receivers,
            nt,
            dt,
            data,
        };
        g.validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        out.push(g);
    }
    if out.is_empty() {
        return Err(Error::format(path, "no shot records"));
    }
    Ok(out)
}

pub fn write_shots(gathers: &[ShotGather], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    binio::write_file(path, &encode_shots(gathers)?)
}

pub fn read_shots(path: impl AsRef<Path>) -> Result<Vec<ShotGather>> {
    let path = path.as_ref();
    decode_shots(&binio::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_peak_and_tails() {
        let f = 15.0;
        assert_eq!(ricker(ricker_delay(f), f), 1.0);
        for k in [6.01, 8.0, 20.0] {
            let tau = k / f;
            assert!(ricker(ricker_delay(f) + tau, f).abs() < 1e-12);
            assert!(ricker(ricker_delay(f) - tau, f).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_abs_sum_is_sixteen_thirds() {
        assert!((STENCIL_ABS_SUM - 16.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cfl_bound_and_decisions() {
        let model = Grid2D::filled(16, 16, 10.0, 4500.0).unwrap();
        let c = check_cfl(&model, 1e-4);
        let expected = 0.9 * 10.0 / (4500.0 * 2f64.sqrt() * 16.0 / 3.0);
        assert!((c.max_stable_dt - expected).abs() < 1e-15);
        assert!(check_cfl(&model, expected * 0.5).passes);
        assert!(check_cfl(&model, expected).passes);
        assert!(!check_cfl(&model, expected * 1.0001).passes);
    }

    #[test]
    fn spread_is_even() {
        assert_eq!(spread(8, 128), vec![8, 24, 40, 56, 72, 88, 104, 120]);
        assert_eq!(spread(128, 128), (0..128).collect::<Vec<_>>());
        assert_eq!(spread(1, 9), vec![4]);
    }

    #[test]
    fn default_geometry() {
        let g = AcquisitionConfig::default()
            .geometry(128, 128, 10.0, 1500.0, 4500.0)
            .unwrap();
        assert_eq!(g.n_shots(), 8);
        assert_eq!(g.n_receivers(), 128);
        assert!(g.receiver_positions.iter().all(|&(_, z)| z == 2));
        let record = 2.0 * 128.0 * 10.0 / 1500.0;
        assert!((g.nt as f64 - 1.0) * g.dt < record && g.nt as f64 * g.dt >= record);
    }

    #[test]
    fn sponge_width_limit() {
        let s = SpongeConfig {
            width: 8,
            ..Default::default()
        };
        assert!(s.validate(16, 16).is_err());
        assert!(SpongeConfig { width: 7, ..s }.validate(16, 16).is_ok());
    }

    #[test]
    fn lerp_identity_and_endpoints() {
        let src = [0.0, 1.0, 4.0, 9.0];
        assert_eq!(lerp_resample(&src, 4), src.to_vec());
        let r = lerp_resample(&src, 7);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[6], 9.0);
        assert!((r[1] - 0.5).abs() < 1e-12);
    }

    fn toy_gather(idx: usize, n_rec: usize, nt: usize, f: impl Fn(usize, usize) -> f32) -> ShotGather {
        let mut data = Vec::new();
        for r in 0..n_rec {
            for t in 0..nt {
                data.push(f(r, t));
            }
        }
        ShotGather {
            shot_index: idx,
            n_receivers: n_rec,
            nt,
            dt: 1e-3,
            data,
        }
    }

    #[test]
    fn shots_round_trip_and_reject_truncation() {
        let gs = vec![
            toy_gather(0, 3, 5, |r, t| (r * 10 + t) as f32),
            toy_gather(1, 3, 5, |r, t| -((r * 10 + t) as f32)),
        ];
        let bytes = encode_shots(&gs).unwrap();
        let back = decode_shots(&bytes, Path::new("m")).unwrap();
        assert_eq!(back[1].data, gs[1].data);
        assert_eq!(back[1].shot_index, 1);
        assert!(decode_shots(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        assert!(decode_shots(&[], Path::new("m")).is_err());
    }

    #[test]
    fn resample_shape_and_standardization() {
        let g = toy_gather(0, 128, 1000, |r, t| ((r as f32) * 0.3 + (t as f32) * 0.01).sin());
        let x = resample_gather_to_grid(&[g], 128, 128).unwrap();
        assert_eq!(x.shape(), [1, 1, 128, 128]);
        let v = x.values();
        let n = v.len() as f64;
        let mean = v.iter().map(|&a| a as f64).sum::<f64>() / n;
        let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var.sqrt() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn resample_constant_channel_is_zero() {
        let g = toy_gather(0, 4, 9, |_, _| 3.5);
        let x = resample_gather_to_grid(&[g], 8, 8).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_rejects_mismatched_gathers() {
        let a = toy_gather(0, 4, 9, |r, t| (r + t) as f32);
        let b = toy_gather(1, 4, 10, |r, t| (r + t) as f32);
        assert!(resample_gather_to_grid(&[a, b], 8, 8).unwrap_err().is_validation());
    }
}
