//! Similarity and summary statistics for predicted velocity models.

use serde::{Deserialize, Serialize};

use crate::grid::Grid2D;
use crate::{Error, Result};

fn check_same_shape(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "grids are {}x{} and {}x{}",
            a.nx(),
            a.nz(),
            b.nx(),
            b.nz()
        )))
    }
}

/// Soft Sørensen–Dice coefficient `2 Σ a_i b_i / (Σ a_i² + Σ b_i²)` of two
/// grids normalized to `[0, 1]`. Two all-zero grids score 1.
pub fn soft_dice(a: &Grid2D, b: &Grid2D) -> Result<f64> {
    check_same_shape(a, b)?;
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa + bb == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * ab / (aa + bb)).clamp(0.0, 1.0))
}

/// Set-overlap Dice `2|A∩B| / (|A|+|B|)` where `A` and `B` are the cells at
/// or above `threshold`. Two empty sets score 1.
pub fn binary_dice(a: &Grid2D, b: &Grid2D, threshold: f32) -> Result<f64> {
    check_same_shape(a, b)?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (ia, ib) = (x >= threshold, y >= threshold);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Signed `pred - truth`, cell by cell.
pub fn difference_image(pred: &Grid2D, truth: &Grid2D) -> Result<Grid2D> {
    check_same_shape(pred, truth)?;
    Grid2D::new(
        pred.nx(),
        pred.nz(),
        pred.dx(),
        pred.values()
            .iter()
            .zip(truth.values())
            .map(|(p, t)| p - t)
            .collect(),
    )
}

/// Minimum, quartiles and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumberSummary {
    /// Quartiles by linear interpolation between order statistics
    /// (position `p * (n - 1)`).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linearly interpolated quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    FiveNumberSummary::of(values).map(|s| s.median)
}
