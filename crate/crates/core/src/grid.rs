//! The 2D raster shared by every stage of the pipeline, its `VGRD` file
//! format, min-max normalization and PGM export.
//!
//! A [`Grid2D`] stores `nz` rows of `nx` values. Row `z` is a constant
//! depth, so a grid written as an image displays upright with the surface
//! at the top.

use std::path::Path;

use crate::binio::{self, Reader};
use crate::error::ensure;
use crate::{Error, Result};

/// Magic bytes opening every grid file.
pub const GRID_MAGIC: &[u8; 4] = b"VGRD";
/// Current `VGRD` format version.
pub const GRID_FORMAT_VERSION: u32 = 1;
/// Smallest admissible extent along either axis.
pub const MIN_EXTENT: usize = 8;

/// Row-major float raster with physical cell size `dx` (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    nx: usize,
    nz: usize,
    dx: f32,
    values: Vec<f32>,
}

impl Grid2D {
    /// Builds a grid from row-major values, validating every invariant.
    pub fn new(nx: usize, nz: usize, dx: f32, values: Vec<f32>) -> Result<Self> {
        let grid = Self { nx, nz, dx, values };
        grid.validate()?;
        Ok(grid)
    }

    pub fn filled(nx: usize, nz: usize, dx: f32, value: f32) -> Result<Self> {
        Self::new(nx, nz, dx, vec![value; nx * nz])
    }

    /// Builds a grid by evaluating `f(x, z)` for every cell.
    pub fn from_fn(
        nx: usize,
        nz: usize,
        dx: f32,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(nx * nz);
        for z in 0..nz {
            for x in 0..nx {
                values.push(f(x, z));
            }
        }
        Self::new(nx, nz, dx, values)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.nx >= MIN_EXTENT && self.nz >= MIN_EXTENT,
            "grid must be at least {MIN_EXTENT}x{MIN_EXTENT}, got {}x{}",
            self.nx,
            self.nz
        );
        ensure!(
            self.values.len() == self.nx * self.nz,
            "grid holds {} values, expected {}",
            self.values.len(),
            self.nx * self.nz
        );
        ensure!(
            self.dx.is_finite() && self.dx > 0.0,
            "cell size must be positive and finite, got {}",
            self.dx
        );
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at cell (x={}, z={})",
                self.values[i],
                i % self.nx,
                i / self.nx
            )));
        }
        Ok(())
    }

    /// Checks that every value lies within `[lo, hi]`.
    pub fn validate_range(&self, lo: f32, hi: f32) -> Result<()> {
        if let Some(i) = self.values.iter().position(|&v| v < lo || v > hi) {
            return Err(Error::Validation(format!(
                "value {} at cell (x={}, z={}) outside [{lo}, {hi}]",
                self.values[i],
                i % self.nx,
                i / self.nx
            )));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dx(&self) -> f32 {
        self.dx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, z: usize) -> f32 {
        self.values[z * self.nx + x]
    }

    pub fn row(&self, z: usize) -> &[f32] {
        &self.values[z * self.nx..(z + 1) * self.nx]
    }

    /// Column `x` from top to bottom.
    pub fn column(&self, x: usize) -> Vec<f32> {
        (0..self.nz).map(|z| self.get(x, z)).collect()
    }

    /// `(min, max)` over all cells.
    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` to every value. The result is revalidated.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.nx,
            self.nz,
            self.dx,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.nz == other.nz
    }
}

/// Serializes a grid to the little-endian `VGRD` layout.
pub fn encode_grid(grid: &Grid2D) -> Result<Vec<u8>> {
    grid.validate()?;
    let mut buf = Vec::with_capacity(20 + grid.values.len() * 4);
    buf.extend_from_slice(GRID_MAGIC);
    binio::put_u32(&mut buf, GRID_FORMAT_VERSION);
    binio::put_u32(&mut buf, grid.nx as u32);
    binio::put_u32(&mut buf, grid.nz as u32);
    binio::put_f32(&mut buf, grid.dx);
    binio::put_f32s(&mut buf, &grid.values);
    Ok(buf)
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<Grid2D> {
    let mut r = Reader::new(bytes, path);
    r.magic(GRID_MAGIC)?;
    r.version(GRID_FORMAT_VERSION)?;
    let nx = r.u32("nx")? as usize;
    let nz = r.u32("nz")? as usize;
    let dx = r.f32("dx")?;
    let count = nx
        .checked_mul(nz)
        .ok_or_else(|| Error::format(path, "nx*nz overflows"))?;
    let values = r.f32s(count, "grid payload")?;
    r.finish()?;
    Grid2D::new(nx, nz, dx, values)
}

/// Writes `grid` to `path` in the `VGRD` format.
pub fn write_grid(grid: &Grid2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    binio::write_file(path, &encode_grid(grid)?)
}

/// Reads a `VGRD` file, rejecting bad magic, version mismatches and
/// truncated payloads.
pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid2D> {
    let path = path.as_ref();
    decode_grid(&binio::read_file(path)?, path)
}

/// Maps values affinely onto `[0, 1]`. A constant grid maps to all zeros.
pub fn normalize_minmax(grid: &Grid2D) -> Result<Grid2D> {
    grid.validate()?;
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    if span <= 0.0 {
        return grid.map(|_| 0.0);
    }
    grid.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Gray-level mapping used by [`export_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Min-max scaled: minimum is black, maximum is white.
    Gray,
    /// Symmetric about zero: `-m` is black, `0` mid-gray, `+m` white, with
    /// `m` the largest magnitude. Used for signed difference images.
    SymmetricGray,
}

/// 8-bit pixel values for `grid` under `colormap`, row-major.
pub fn to_pixels(grid: &Grid2D, colormap: Colormap) -> Vec<u8> {
    match colormap {
        Colormap::Gray => {
            let (lo, hi) = grid.min_max();
            let span = hi - lo;
            grid.values
                .iter()
                .map(|&v| {
                    if span > 0.0 {
                        (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect()
        }
        Colormap::SymmetricGray => {
            let m = grid.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            grid.values
                .iter()
                .map(|&v| {
                    let t = if m > 0.0 { 0.5 + 0.5 * v / m } else { 0.5 };
                    (t * 255.0).round().clamp(0.0, 255.0) as u8
                })
                .collect()
        }
    }
}

/// Encodes a binary (`P5`) PGM image with `nx` columns and `nz` rows.
pub fn encode_pgm(grid: &Grid2D, colormap: Colormap) -> Result<Vec<u8>> {
    grid.validate()?;
    let mut buf = format!("P5\n{} {}\n255\n", grid.nx, grid.nz).into_bytes();
    buf.extend_from_slice(&to_pixels(grid, colormap));
    Ok(buf)
}

pub fn export_image(grid: &Grid2D, path: impl AsRef<Path>, colormap: Colormap) -> Result<()> {
    let path = path.as_ref();
    binio::write_file(path, &encode_pgm(grid, colormap)?)
}
