#![allow(dead_code)]

pub mod physics;
pub mod suite;

use velinv::grid::Grid2D;
use velinv::wave::{max_stable_dt, propagate_shot, ricker, AcquisitionGeometry, SpongeConfig};

/// Fraction of the trace maximum that defines a first break.
pub const PICK_FRACTION: f64 = 0.01;

pub fn single_trace_geometry(
    source: (usize, usize),
    receiver: (usize, usize),
    dt: f64,
    seconds: f64,
) -> AcquisitionGeometry {
    AcquisitionGeometry {
        source_positions: vec![source],
        receiver_positions: vec![receiver],
        dt,
        nt: (seconds / dt).ceil() as usize,
        f_peak: 15.0,
        source_amplitude: 1.0,
    }
}

/// Time of the first sample whose magnitude reaches `frac` of the
/// maximum, refined by linear interpolation of the crossing.
pub fn first_break(samples: &[f64], dt: f64, frac: f64) -> f64 {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let level = frac * peak;
    let n = samples
        .iter()
        .position(|v| v.abs() >= level)
        .expect("trace has a maximum");
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (samples[n - 1].abs(), samples[n].abs());
    let t = if b > a { (level - a) / (b - a) } else { 1.0 };
    (n as f64 - 1.0 + t) * dt
}

/// Onset of the source wavelet under the same pick rule.
pub fn wavelet_onset(f_peak: f64, dt: f64) -> f64 {
    let n = (4.0 / f_peak / dt).ceil() as usize;
    let w: Vec<f64> = (0..n).map(|k| ricker(k as f64 * dt, f_peak)).collect();
    first_break(&w, dt, PICK_FRACTION)
}

/// Source-to-receiver travel time picked from a simulated trace.
pub fn picked_arrival(model: &Grid2D, source: (usize, usize), receiver: (usize, usize), dt: f64, seconds: f64) -> f64 {
    let g = single_trace_geometry(source, receiver, dt, seconds);
    let gather = propagate_shot(model, source, &g, &SpongeConfig::default()).unwrap();
    let trace: Vec<f64> = gather.trace(0).iter().map(|&v| v as f64).collect();
    first_break(&trace, dt, PICK_FRACTION) - wavelet_onset(g.f_peak, dt)
}

pub fn homogeneous(n: usize, dx: f32, v: f32) -> Grid2D {
    Grid2D::filled(n, n, dx, v).unwrap()
}

pub fn default_dt(dx: f64, v: f64) -> f64 {
    max_stable_dt(dx, v)
}

pub fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let den: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum();
    (num / den).sqrt()
}

use rand::seq::SliceRandom;
use rand::Rng;
use velinv::nn::{ParamStore, Scalar, Tape, Tensor4, Var};
use velinv::unet::UNetModel;

pub fn random_tensor<T: Scalar>(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

/// Values at least `gap` apart, so no 2x2 window has a near tie.
pub fn spread_tensor<T: Scalar>(rng: &mut impl Rng, shape: [usize; 4], gap: f64) -> Tensor4<T> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor4::from_fn(shape, |i| T::from_f64((ranks[i] as f64 - n as f64 / 2.0) * gap))
}

/// Values with magnitude at least `margin`, away from the ReLU kink.
pub fn off_zero_tensor<T: Scalar>(rng: &mut impl Rng, shape: [usize; 4], margin: f64) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| {
        let m = rng.gen_range(margin..1.0);
        T::from_f64(if rng.gen::<bool>() { m } else { -m })
    })
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = na.max(nb);
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}


fn epsilon<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        f32::EPSILON as f64
    } else {
        f64::EPSILON
    }
}

/// Central difference of `f` at `x0` with step `h`, or `None` when a
/// ReLU or max-pool switch lies within the stencil. Along one coordinate
/// the losses checked here are piecewise quadratic, so the central
/// difference is exact on a smooth piece and the `h` and `h/2` estimates
/// agree up to rounding; a switch breaks that agreement.
pub fn central_difference<T: Scalar>(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> Option<f64> {
    let f0 = f(x0);
    let eps = epsilon::<T>();
    let rel = if eps < 1e-10 { 1e-6 } else { 1e-3 };
    // A kink inside the stencil makes D(h) and D(h/2) disagree; retry with
    // a narrower stencil before giving up. A kink exactly at x0 keeps the
    // two agreeing, but then the jump (f+ - 2 f0 + f-) / h does not shrink
    // with h the way curvature does.
    let mut h = h;
    for _ in 0..3 {
        let (p1, m1) = (f(x0 + h), f(x0 - h));
        let (p2, m2) = (f(x0 + h / 2.0), f(x0 - h / 2.0));
        let d1 = (p1 - m1) / (2.0 * h);
        let d2 = (p2 - m2) / h;
        let c1 = (p1 - 2.0 * f0 + m1) / h;
        let c2 = (p2 - 2.0 * f0 + m2) / (h / 2.0);
        let noise = 64.0 * eps * f0.abs().max(1e-30) / h;
        let scale = rel * d1.abs().max(d2.abs());
        if (d1 - d2).abs() <= scale + noise && (c1 - 2.0 * c2).abs() <= scale + 4.0 * noise {
            return Some(d1);
        }
        h /= 8.0;
    }
    None
}

/// Outcome of a gradient check: relative error over the coordinates with a
/// smooth stencil, and how many coordinates were skipped.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    fn from_pairs(pairs: Vec<(f64, Option<f64>)>) -> Self {
        let skipped = pairs.iter().filter(|p| p.1.is_none()).count();
        let (a, n): (Vec<f64>, Vec<f64>) = pairs.into_iter().filter_map(|(a, n)| n.map(|n| (a, n))).unzip();
        Self { rel_err: rel_err(&a, &n), checked: a.len(), skipped }
    }

    /// Passes when the error is below `tol` and at most a quarter of the
    /// coordinates sat on a switch.
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol && self.skipped * 4 <= self.checked + self.skipped
    }
}

/// Compares input-leaf gradients of the scalar `loss(tape, leaves)` with
/// central differences of step `h`; returns the relative error over all
/// leaves.
pub fn gradcheck_inputs<T: Scalar>(
    inputs: &[Tensor4<T>],
    loss: impl Fn(&mut Tape<T>, &[Var]) -> velinv::Result<Var>,
    h: f64,
) -> GradCheck {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone(), true).unwrap()).collect();
    let l = loss(&mut tape, &vars).unwrap();
    tape.backward(l, &mut ParamStore::new()).unwrap();
    let mut analytic = Vec::new();
    for &v in &vars {
        let g = tape.grad(v).expect("every leaf reaches the loss");
        analytic.extend(g.values().iter().map(|x| x.to_f64()));
    }
    let eval = |xs: &[Tensor4<T>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.input(x.clone(), false).unwrap()).collect();
        let l = loss(&mut t, &vs).unwrap();
        t.value(l).values()[0].to_f64()
    };
    let mut pairs = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    let mut a = analytic.into_iter();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].values()[i].to_f64();
            let d = central_difference::<T>(
                |x| {
                    work[k].values_mut()[i] = T::from_f64(x);
                    eval(&work)
                },
                x0,
                h,
            );
            work[k].values_mut()[i] = inputs[k].values()[i];
            pairs.push((a.next().unwrap(), d));
        }
    }
    GradCheck::from_pairs(pairs)
}

fn model_loss<T: Scalar>(m: &UNetModel<T>, x: &Tensor4<T>, target: &Tensor4<T>) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), false).unwrap();
    let tv = tape.input(target.clone(), false).unwrap();
    let y = m.forward(&mut tape, xv).unwrap();
    let l = tape.mse(y, tv).unwrap();
    tape.value(l).values()[0].to_f64()
}

/// Back-propagated gradient of `mse(model(x), target)`, all parameters
/// flattened in order.
pub fn model_gradient<T: Scalar>(model: &mut UNetModel<T>, x: &Tensor4<T>, target: &Tensor4<T>) -> Vec<f64> {
    model.params.zero_grads();
    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), false).unwrap();
    let tv = tape.input(target.clone(), false).unwrap();
    let y = model.forward(&mut tape, xv).unwrap();
    let l = tape.mse(y, tv).unwrap();
    tape.backward(l, &mut model.params).unwrap();
    model
        .params
        .iter()
        .flat_map(|p| p.grad.as_ref().unwrap().values().iter().map(|v| v.to_f64()).collect::<Vec<_>>())
        .collect()
}

/// Central differences of the same loss for every parameter.
pub fn model_numeric_gradient<T: Scalar>(
    model: &mut UNetModel<T>,
    x: &Tensor4<T>,
    target: &Tensor4<T>,
    h: f64,
) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(model.count_params());
    for k in 0..model.params.len() {
        let n = model.params.iter().nth(k).unwrap().value.len();
        for i in 0..n {
            let x0 = model.params.iter().nth(k).unwrap().value.values()[i];
            let d = central_difference::<T>(
                |v| {
                    model.params.iter_mut().nth(k).unwrap().value.values_mut()[i] = T::from_f64(v);
                    model_loss(model, x, target)
                },
                x0.to_f64(),
                h,
            );
            model.params.iter_mut().nth(k).unwrap().value.values_mut()[i] = x0;
            out.push(d);
        }
    }
    out
}

/// Gradient check of every parameter of `model` under
/// `mse(model(x), target)`.
pub fn gradcheck_model<T: Scalar>(
    model: &mut UNetModel<T>,
    x: &Tensor4<T>,
    target: &Tensor4<T>,
    h: f64,
) -> GradCheck {
    let analytic = model_gradient(model, x, target);
    let numeric = model_numeric_gradient(model, x, target, h);
    GradCheck::from_pairs(analytic.into_iter().zip(numeric).collect())
}

/// Single-precision back-propagation checked against double-precision
/// central differences of the same network (the f64 shadow).
pub fn gradcheck_model_shadow(
    model: &mut UNetModel<f32>,
    x: &Tensor4<f32>,
    target: &Tensor4<f32>,
    h: f64,
) -> GradCheck {
    let analytic = model_gradient(model, x, target);
    let mut shadow = model.cast::<f64>();
    let numeric = model_numeric_gradient(&mut shadow, &x.cast(), &target.cast(), h);
    GradCheck::from_pairs(analytic.into_iter().zip(numeric).collect())
}

/// Direct six-loop 3x3 same-padding cross-correlation plus bias.
pub fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>) -> Vec<f64> {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[0];
    let mut out = vec![0.0; n * co * h * wd];
    for s in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.values()[o];
                    for c in 0..ci {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.at(o, c, ky, kx) * x.at(s, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[((s * co + o) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}
