//! Procedural layered velocity models with optional folds and faults.
//!
//! A model is built from a stack of [`LayerInterface`]s. The first interface
//! is the surface (depth 0) and each following one marks the top of a
//! deeper layer. Folding perturbs every interface's depth profile with the
//! same sinusoid; faulting acts on the rasterized grid and displaces the
//! hanging wall vertically.

use std::f32::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::grid::{Grid2D, MIN_EXTENT};
use crate::seed;
use crate::Result;

/// Thinnest layer produced by [`generate_model`], in cells.
pub const MIN_LAYER_THICKNESS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeologyPreset {
    /// Flat layers, no folds or faults.
    Simple,
    /// Layers deformed by folds and faults.
    Complex,
}

impl std::fmt::Display for GeologyPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeologyPreset::Simple => "simple",
            GeologyPreset::Complex => "complex",
        })
    }
}

impl std::str::FromStr for GeologyPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simple" => Ok(GeologyPreset::Simple),
            "complex" => Ok(GeologyPreset::Complex),
            other => Err(format!("unknown preset {other:?} (expected simple|complex)")),
        }
    }
}

/// Parameters of the model generator. Ranges are inclusive `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeologyConfig {
    pub nx: usize,
    pub nz: usize,
    /// Cell size in meters.
    pub dx: f32,
    /// Layer count, drawn uniformly from this range.
    pub n_layers_range: [usize; 2],
    /// Velocity bounds (m/s). Layer velocities are uniform in this interval.
    pub v_floor: f32,
    pub v_ceil: f32,
    /// Sort layer velocities so they never decrease with depth.
    pub v_monotone: bool,
    /// Number of independent fold draws per model.
    pub fold_events: usize,
    pub fold_probability: f64,
    /// Cells.
    pub fold_amplitude_range: [f32; 2],
    /// Cells.
    pub fold_wavelength_range: [f32; 2],
    /// Number of independent fault draws per model.
    pub fault_events: usize,
    pub fault_probability: f64,
    /// Signed vertical throw in cells; positive moves the hanging wall down.
    pub fault_throw_range: [i32; 2],
    /// Degrees from horizontal; 90 is a vertical fault.
    pub fault_dip_range: [f32; 2],
    pub preset: GeologyPreset,
}

impl GeologyConfig {
    pub fn preset(preset: GeologyPreset) -> Self {
        match preset {
            GeologyPreset::Simple => Self::simple(),
            GeologyPreset::Complex => Self::complex(),
        }
    }

    /// Flat-layered 128x128 models at 10 m spacing, 1500 to 4500 m/s.
    pub fn simple() -> Self {
        Self {
            nx: 128,
            nz: 128,
            dx: 10.0,
            n_layers_range: [3, 8],
            v_floor: 1500.0,
            v_ceil: 4500.0,
            v_monotone: true,
            fold_events: 0,
            fold_probability: 0.0,
            fold_amplitude_range: [0.0, 0.0],
            fold_wavelength_range: [64.0, 64.0],
            fault_events: 0,
            fault_probability: 0.0,
            fault_throw_range: [0, 0],
            fault_dip_range: [90.0, 90.0],
            preset: GeologyPreset::Simple,
        }
    }

    /// Same grid and velocities as [`GeologyConfig::simple`] with up to two
    /// folds and one fault per model.
    pub fn complex() -> Self {
        Self {
            fold_events: 2,
            fold_probability: 0.7,
            fold_amplitude_range: [2.0, 12.0],
            fold_wavelength_range: [32.0, 256.0],
            fault_events: 1,
            fault_probability: 0.6,
            fault_throw_range: [-20, 20],
            fault_dip_range: [55.0, 90.0],
            preset: GeologyPreset::Complex,
            ..Self::simple()
        }
    }

    /// Copy of this configuration resized to `nx` x `nz` cells, keeping
    /// cell size and velocities. Fold amplitudes, fold wavelengths and
    /// fault throws are given in cells and scale with the grid.
    pub fn with_extent(mut self, nx: usize, nz: usize) -> Self {
        let sx = nx as f32 / self.nx as f32;
        let sz = nz as f32 / self.nz as f32;
        self.fold_amplitude_range = self.fold_amplitude_range.map(|a| a * sz);
        self.fold_wavelength_range = self.fold_wavelength_range.map(|w| w * sx);
        self.fault_throw_range = self.fault_throw_range.map(|t| (t as f32 * sz).round() as i32);
        self.nx = nx;
        self.nz = nz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.nx >= MIN_EXTENT && self.nz >= MIN_EXTENT,
            "model must be at least {MIN_EXTENT}x{MIN_EXTENT} cells, got {}x{}",
            self.nx,
            self.nz
        );
        ensure!(self.dx.is_finite() && self.dx > 0.0, "dx must be positive");
        ensure!(
            self.v_floor.is_finite() && self.v_ceil.is_finite(),
            "velocity bounds must be finite"
        );
        ensure!(
            self.v_floor > 0.0 && self.v_floor < self.v_ceil,
            "need 0 < v_floor < v_ceil, got [{}, {}]",
            self.v_floor,
            self.v_ceil
        );
        let [lmin, lmax] = self.n_layers_range;
        ensure!(
            lmin >= 1 && lmin <= lmax,
            "n_layers_range must satisfy 1 <= min <= max, got {:?}",
            self.n_layers_range
        );
        ensure!(
            lmax * MIN_LAYER_THICKNESS <= self.nz,
            "{lmax} layers of at least {MIN_LAYER_THICKNESS} cells do not fit in nz={}",
            self.nz
        );
        for (name, p) in [
            ("fold_probability", self.fold_probability),
            ("fault_probability", self.fault_probability),
        ] {
            ensure!((0.0..=1.0).contains(&p), "{name} must lie in [0, 1], got {p}");
        }
        let [amin, amax] = self.fold_amplitude_range;
        ensure!(
            amin >= 0.0 && amin <= amax && amax < self.nz as f32,
            "fold_amplitude_range {:?} must be a non-empty range within [0, nz)",
            self.fold_amplitude_range
        );
        let [wmin, wmax] = self.fold_wavelength_range;
        ensure!(
            wmin > 0.0 && wmin <= wmax,
            "fold_wavelength_range {:?} must be a non-empty positive range",
            self.fold_wavelength_range
        );
        let [tmin, tmax] = self.fault_throw_range;
        ensure!(
            tmin <= tmax && (tmin.unsigned_abs() as usize) * 2 < self.nz
                && (tmax.unsigned_abs() as usize) * 2 < self.nz,
            "fault_throw_range {:?} must be non-empty with |throw| < nz/2",
            self.fault_throw_range
        );
        let [dmin, dmax] = self.fault_dip_range;
        ensure!(
            dmin > 0.0 && dmin <= dmax && dmax <= 90.0,
            "fault_dip_range {:?} must lie in (0, 90]",
            self.fault_dip_range
        );
        if self.preset == GeologyPreset::Simple {
            ensure!(
                self.fold_probability == 0.0 && self.fault_probability == 0.0,
                "the simple preset admits no folds or faults"
            );
        }
        Ok(())
    }
}

/// Top boundary of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInterface {
    /// Depth of the interface in each column, in cells (length `nx`).
    pub depth_profile: Vec<f32>,
    /// Velocity of the layer below this interface (m/s).
    pub layer_velocity: f32,
}

impl LayerInterface {
    pub fn flat(nx: usize, depth: f32, layer_velocity: f32) -> Self {
        Self {
            depth_profile: vec![depth; nx],
            layer_velocity,
        }
    }

    pub fn mean_depth(&self) -> f32 {
        let n = self.depth_profile.len().max(1) as f32;
        self.depth_profile.iter().sum::<f32>() / n
    }
}

/// Rasterizes interfaces (ordered shallow to deep) onto an `nx` x `nz` grid.
/// Each cell takes the velocity of the deepest interface at or above it;
/// cells above every interface take the shallowest layer's velocity.
pub fn rasterize(interfaces: &[LayerInterface], nx: usize, nz: usize, dx: f32) -> Result<Grid2D> {
    ensure!(!interfaces.is_empty(), "at least one interface is required");
    for (i, iface) in interfaces.iter().enumerate() {
        ensure!(
            iface.depth_profile.len() == nx,
            "interface {i} has {} columns, expected {nx}",
            iface.depth_profile.len()
        );
    }
    let top = interfaces[0].layer_velocity;
    Grid2D::from_fn(nx, nz, dx, |x, z| {
        let zf = z as f32;
        interfaces
            .iter()
            .rev()
            .find(|iface| iface.depth_profile[x] <= zf)
            .map_or(top, |iface| iface.layer_velocity)
    })
}

/// Adds `amplitude * sin(2*pi*i/wavelength + phase)` to column `i` of every
/// interface, then clamps depths to `[0, nz]`.
///
/// The amplitude is capped at half the smallest gap between consecutive
/// interface mean depths so that the mean-depth ordering survives.
pub fn apply_fold(
    interfaces: &[LayerInterface],
    amplitude: f32,
    wavelength: f32,
    phase: f32,
    nz: usize,
) -> Result<Vec<LayerInterface>> {
    ensure!(amplitude >= 0.0 && amplitude.is_finite(), "fold amplitude must be >= 0");
    ensure!(wavelength > 0.0 && wavelength.is_finite(), "fold wavelength must be > 0");
    ensure!(phase.is_finite(), "fold phase must be finite");
    let min_gap = interfaces
        .windows(2)
        .map(|w| w[1].mean_depth() - w[0].mean_depth())
        .fold(f32::INFINITY, f32::min);
    let amplitude = amplitude.min(0.5 * min_gap);
    let nz = nz as f32;
    Ok(interfaces
        .iter()
        .map(|iface| LayerInterface {
            depth_profile: iface
                .depth_profile
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let shift = amplitude * (2.0 * PI * i as f32 / wavelength + phase).sin();
                    (d + shift).clamp(0.0, nz)
                })
                .collect(),
            layer_velocity: iface.layer_velocity,
        })
        .collect())
}

/// Horizontal position (cells) of the fault trace at depth `z`.
pub fn fault_trace_x(fault_x0: f32, dip_deg: f32, z: f32) -> f32 {
    let lean = (90.0 - dip_deg).to_radians().tan();
    fault_x0 + z * lean
}

/// Displaces every cell at or right of the fault trace `throw` cells
/// downward (upward for negative throw).
///
/// Cells vacated at the top take the column's shallowest value; cells
/// vacated at the bottom (negative throw) take the deepest. Cells pushed
/// past the grid edge are discarded.
pub fn apply_fault(model: &Grid2D, fault_x0: f32, dip_deg: f32, throw: i32) -> Result<Grid2D> {
    let (nx, nz) = (model.nx(), model.nz());
    ensure!(
        dip_deg > 0.0 && dip_deg <= 90.0,
        "fault dip must lie in (0, 90] degrees, got {dip_deg}"
    );
    ensure!(
        (throw.unsigned_abs() as usize) * 2 < nz,
        "|throw| = {} must be below nz/2 = {}",
        throw.unsigned_abs(),
        nz / 2
    );
    let x_top = fault_trace_x(fault_x0, dip_deg, 0.0);
    let x_bottom = fault_trace_x(fault_x0, dip_deg, (nz - 1) as f32);
    ensure!(
        fault_x0.is_finite() && x_top < nx as f32 && x_bottom >= 0.0,
        "fault trace from x={x_top} to x={x_bottom} does not intersect the grid"
    );
    if throw == 0 {
        return Ok(model.clone());
    }
    Grid2D::from_fn(nx, nz, model.dx(), |x, z| {
        if (x as f32) < fault_trace_x(fault_x0, dip_deg, z as f32) {
            return model.get(x, z);
        }
        let src = z as i64 - throw as i64;
        if src < 0 {
            model.get(x, 0)
        } else if src >= nz as i64 {
            model.get(x, nz - 1)
        } else {
            model.get(x, src as usize)
        }
    })
}

/// Draws the interface stack for one model: a surface interface plus
/// `n_layers - 1` flat interfaces whose layer thicknesses are a uniformly
/// random composition of `nz` with every part at least
/// [`MIN_LAYER_THICKNESS`].
fn draw_interfaces(config: &GeologyConfig, n_layers: usize, rng: &mut impl Rng) -> Vec<LayerInterface> {
    let slack = config.nz - n_layers * MIN_LAYER_THICKNESS;
    let mut cuts: Vec<usize> = (0..n_layers - 1).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();

    let mut velocities: Vec<f32> = (0..n_layers)
        .map(|_| rng.gen_range(config.v_floor..=config.v_ceil))
        .collect();
    if config.v_monotone {
        velocities.sort_by(f32::total_cmp);
    }

    let mut interfaces = vec![LayerInterface::flat(config.nx, 0.0, velocities[0])];
    for (k, &cut) in cuts.iter().enumerate() {
        let depth = cut + (k + 1) * MIN_LAYER_THICKNESS;
        interfaces.push(LayerInterface::flat(config.nx, depth as f32, velocities[k + 1]));
    }
    interfaces
}

struct FoldDraw {
    apply: bool,
    amplitude: f32,
    wavelength: f32,
    phase: f32,
}

struct FaultDraw {
    apply: bool,
    x0: f32,
    dip: f32,
    throw: i32,
}

/// Generates one velocity model. Pure in `(config, seed)`.
///
/// The random stream is consumed in a fixed order (layer count, layers,
/// every fold slot, every fault slot) whether or not an event is applied,
/// so toggling one event type never changes the others.
pub fn generate_model(config: &GeologyConfig, seed: u64) -> Result<Grid2D> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let [lmin, lmax] = config.n_layers_range;
    let n_layers = rng.gen_range(lmin..=lmax);
    let mut interfaces = draw_interfaces(config, n_layers, &mut rng);

    let folds: Vec<FoldDraw> = (0..config.fold_events)
        .map(|_| {
            let [amin, amax] = config.fold_amplitude_range;
            let [wmin, wmax] = config.fold_wavelength_range;
            FoldDraw {
                apply: rng.gen_bool(config.fold_probability),
                amplitude: rng.gen_range(amin..=amax),
                wavelength: rng.gen_range(wmin..=wmax),
                phase: rng.gen_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let faults: Vec<FaultDraw> = (0..config.fault_events)
        .map(|_| {
            let [tmin, tmax] = config.fault_throw_range;
            let [dmin, dmax] = config.fault_dip_range;
            FaultDraw {
                apply: rng.gen_bool(config.fault_probability),
                x0: rng.gen_range(0.25 * config.nx as f32..0.75 * config.nx as f32),
                dip: rng.gen_range(dmin..=dmax),
                throw: rng.gen_range(tmin..=tmax),
            }
        })
        .collect();

    for fold in folds.iter().filter(|f| f.apply) {
        interfaces = apply_fold(&interfaces, fold.amplitude, fold.wavelength, fold.phase, config.nz)?;
    }
    let mut model = rasterize(&interfaces, config.nx, config.nz, config.dx)?;
    for fault in faults.iter().filter(|f| f.apply) {
        model = apply_fault(&model, fault.x0, fault.dip, fault.throw)?;
    }
    model.validate_range(config.v_floor, config.v_ceil)?;
    Ok(model)
}

/// Number of layers [`generate_model`] will draw for `seed`.
pub fn sampled_layer_count(config: &GeologyConfig, seed: u64) -> usize {
    let [lmin, lmax] = config.n_layers_range;
    seed::rng(seed).gen_range(lmin..=lmax)
}
