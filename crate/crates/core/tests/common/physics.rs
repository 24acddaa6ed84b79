//! Propagator measurements shared by the physics tests and the acceptance
//! runner. All run on 128x128 models at 10 m spacing.

use velinv::grid::Grid2D;
use velinv::wave::{check_cfl, max_stable_dt, propagate_shot, ricker, Propagator, SpongeConfig};
use velinv::Error;

use super::*;

/// `(picked, expected, tolerance)` of the direct arrival 500 m from the
/// source at 1500 m/s.
pub fn first_arrival() -> (f64, f64, f64) {
    let (dx, v) = (10.0, 1500.0);
    let model = homogeneous(128, dx as f32, v as f32);
    let dt = default_dt(dx, v);
    let t = picked_arrival(&model, (20, 64), (70, 64), dt, 0.6);
    (t, 500.0 / v, 2.0 * dt.max(dx / v))
}

/// Relative L2 difference between the A->B and B->A traces.
pub fn reciprocity_error() -> f64 {
    let model = homogeneous(128, 10.0, 1800.0);
    let dt = default_dt(10.0, 1800.0);
    let (a, b) = ((30, 10), (95, 70));
    let sp = SpongeConfig::default();
    let ab = propagate_shot(&model, a, &single_trace_geometry(a, b, dt, 0.6), &sp).unwrap();
    let ba = propagate_shot(&model, b, &single_trace_geometry(b, a, dt, 0.6), &sp).unwrap();
    rel_l2(ab.trace(0), ba.trace(0))
}

/// Injects the wavelet at `source` and returns Σp² after every step.
pub fn energy_history(model: &Grid2D, source: (usize, usize), dt: f64, steps: usize) -> Vec<f64> {
    let mut p = Propagator::new(model, dt, &SpongeConfig::default()).unwrap();
    (0..steps)
        .map(|n| {
            p.step(source, ricker(n as f64 * dt, 15.0));
            p.energy()
        })
        .collect()
}

/// Final over peak energy after twice the corner-to-corner travel time,
/// for a central and a near-surface source.
pub fn sponge_residuals() -> Vec<((usize, usize), f64)> {
    let (dx, v) = (10.0, 1500.0);
    let model = homogeneous(128, dx as f32, v as f32);
    let dt = default_dt(dx, v);
    let seconds = 2.0 * 128.0 * dx * std::f64::consts::SQRT_2 / v;
    let steps = (seconds / dt).ceil() as usize;
    [(64, 64), (64, 2)]
        .into_iter()
        .map(|source| {
            let e = energy_history(&model, source, dt, steps);
            let peak = e.iter().cloned().fold(0.0, f64::max);
            (source, e.last().unwrap() / peak)
        })
        .collect()
}

/// Whether a time step 1% over the bound is refused with a CFL error
/// while the bound itself is accepted.
pub fn cfl_refused() -> bool {
    let model = homogeneous(128, 10.0, 4500.0);
    let bound = max_stable_dt(10.0, 4500.0);
    let g = single_trace_geometry((10, 10), (40, 10), bound * 1.01, 0.1);
    let refused = matches!(
        propagate_shot(&model, (10, 10), &g, &SpongeConfig::default()),
        Err(Error::Cfl { max_stable_dt, .. }) if max_stable_dt == bound
    );
    refused && check_cfl(&model, bound).passes
}
