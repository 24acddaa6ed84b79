//! Gradient and convolution checks shared by the autodiff tests and the
//! acceptance runner. Each returns one result per random instance.

use rand::Rng;
use velinv::nn::{Scalar, Tape, Var};
use velinv::seed;
use velinv::unet::{build_unet, UNetConfig};

use super::*;

pub const INSTANCES: u64 = 20;

/// Finite-difference step and relative-error tolerance.
pub const F64_CHECK: (f64, f64) = (1e-3, 1e-4);
pub const F32_CHECK: (f64, f64) = (1e-2, 1e-2);

fn mse_against(tape: &mut Tape<impl Scalar>, y: Var, seed_: u64) -> velinv::Result<Var> {
    let mut rng = seed::rng(seed_);
    let t = random_tensor(&mut rng, tape.shape(y));
    let tv = tape.input(t, false)?;
    tape.mse(y, tv)
}

fn random_dims(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    (rng.gen_range(1..3), rng.gen_range(1..4), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4))
}

fn check_conv<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(100 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let co = rng.gen_range(1..4);
        let inputs = vec![
            random_tensor::<T>(&mut rng, [n, c, hh, ww]),
            random_tensor::<T>(&mut rng, [co, c, 3, 3]),
            random_tensor::<T>(&mut rng, [co, 1, 1, 1]),
        ];
        
        gradcheck_inputs(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

fn check_maxpool<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(200 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let inputs = vec![spread_tensor::<T>(&mut rng, [n, c, hh, ww], 0.05)];
        
        gradcheck_inputs(&inputs, |t, v| {
            let y = t.maxpool2(v[0])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

fn check_upsample<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(300 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let inputs = vec![random_tensor::<T>(&mut rng, [n, c, hh / 2, ww / 2])];
        
        gradcheck_inputs(&inputs, |t, v| {
            let y = t.upsample2(v[0])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

fn check_relu<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(400 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let inputs = vec![off_zero_tensor::<T>(&mut rng, [n, c, hh, ww], 0.05)];
        
        gradcheck_inputs(&inputs, |t, v| {
            let y = t.relu(v[0])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

fn check_concat<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(500 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let c2 = rng.gen_range(1..4);
        let inputs = vec![
            random_tensor::<T>(&mut rng, [n, c, hh, ww]),
            random_tensor::<T>(&mut rng, [n, c2, hh, ww]),
        ];
        
        gradcheck_inputs(&inputs, |t, v| {
            let y = t.concat(v[0], v[1])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

fn check_mse<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(600 + s);
        let (n, c, hh, ww) = random_dims(&mut rng);
        let inputs = vec![
            random_tensor::<T>(&mut rng, [n, c, hh, ww]),
            random_tensor::<T>(&mut rng, [n, c, hh, ww]),
        ];
        
        gradcheck_inputs(&inputs, |t, v| t.mse(v[0], v[1]), h)
    }).collect()
}

/// conv -> relu -> maxpool -> conv -> upsample -> concat -> conv, the
/// operator mix of a two-level network.
fn check_composite<T: Scalar>(h: f64) -> Vec<GradCheck> {
    (0..INSTANCES).map(|s| {
        let mut rng = seed::rng(700 + s);
        let inputs = vec![
            random_tensor::<T>(&mut rng, [1, 2, 4, 4]),
            random_tensor::<T>(&mut rng, [3, 2, 3, 3]),
            random_tensor::<T>(&mut rng, [3, 1, 1, 1]),
            random_tensor::<T>(&mut rng, [3, 3, 3, 3]),
            random_tensor::<T>(&mut rng, [3, 1, 1, 1]),
            random_tensor::<T>(&mut rng, [1, 6, 3, 3]),
            random_tensor::<T>(&mut rng, [1, 1, 1, 1]),
        ];
        
        gradcheck_inputs(&inputs, |t, v| {
            let a = t.conv2d(v[0], v[1], v[2])?;
            let a = t.relu(a)?;
            let p = t.maxpool2(a)?;
            let b = t.conv2d(p, v[3], v[4])?;
            let u = t.upsample2(b)?;
            let m = t.concat(u, a)?;
            let y = t.conv2d(m, v[5], v[6])?;
            mse_against(t, y, s)
        }, h)
    }).collect()
}

/// Every operator check, by name.
pub fn op_checks<T: Scalar>(h: f64) -> Vec<(&'static str, Vec<GradCheck>)> {
    vec![
        ("conv2d", check_conv::<T>(h)),
        ("maxpool2", check_maxpool::<T>(h)),
        ("upsample2", check_upsample::<T>(h)),
        ("relu", check_relu::<T>(h)),
        ("concat", check_concat::<T>(h)),
        ("mse", check_mse::<T>(h)),
        ("composite", check_composite::<T>(h)),
    ]
}

pub fn tiny_unet(depth: usize, hw: usize) -> UNetConfig {
    UNetConfig {
        in_channels: 1,
        depth,
        base_channels: 2,
        outer_skip: true,
        input_hw: (hw, hw),
    }
}

/// UNet parameter gradients per instance: f64 at depth 1, f64 at depth 2
/// (alternating outer skip), and the f32 depth-1 network against its f64
/// shadow.
pub struct UnetChecks {
    pub f64_depth1: Vec<GradCheck>,
    pub f64_depth2: Vec<GradCheck>,
    pub f32_depth1: Vec<GradCheck>,
}

pub fn unet_checks() -> UnetChecks {
    let mut out = UnetChecks {
        f64_depth1: Vec::new(),
        f64_depth2: Vec::new(),
        f32_depth1: Vec::new(),
    };
    for s in 0..INSTANCES {
        let mut rng = seed::rng(800 + s);
        for (depth, outer) in [(1, true), (2, s % 2 == 0)] {
            let cfg = UNetConfig { outer_skip: outer, ..tiny_unet(depth, 8) };
            let mut m64 = build_unet::<f64>(cfg, s).unwrap();
            let x = random_tensor::<f64>(&mut rng, [1, 1, 8, 8]);
            let t = random_tensor::<f64>(&mut rng, [1, 1, 8, 8]);
            let err = gradcheck_model(&mut m64, &x, &t, F64_CHECK.0);
            if depth == 1 {
                out.f64_depth1.push(err);
                let mut m32 = m64.cast::<f32>();
                out.f32_depth1.push(gradcheck_model_shadow(&mut m32, &x.cast(), &t.cast(), F64_CHECK.0));
            } else {
                out.f64_depth2.push(err);
            }
        }
    }
    out
}

/// Relative error of the f32 convolution against the six-loop f64 oracle
/// on 100 random shapes.
pub fn conv_oracle_errors() -> Vec<f64> {
    let mut rng = seed::rng(7);
    (0..100)
        .map(|_| {
            let shape = [rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..17), rng.gen_range(1..17)];
            let co = rng.gen_range(1..5);
            let x = random_tensor::<f64>(&mut rng, shape);
            let w = random_tensor::<f64>(&mut rng, [co, shape[1], 3, 3]);
            let b = random_tensor::<f64>(&mut rng, [co, 1, 1, 1]);
            let want = naive_conv(&x, &w, &b);
            let mut tape = Tape::<f32>::new();
            let (xv, wv, bv) = (
                tape.input(x.cast(), false).unwrap(),
                tape.input(w.cast(), false).unwrap(),
                tape.input(b.cast(), false).unwrap(),
            );
            let y = tape.conv2d(xv, wv, bv).unwrap();
            let got: Vec<f64> = tape.value(y).values().iter().map(|&v| v as f64).collect();
            rel_err(&got, &want)
        })
        .collect()
}

/// Aggregates over the instances of one check.
pub trait GradCheckList {
    fn all_pass(&self, tol: f64) -> bool;
    fn worst(&self) -> f64;
}

impl GradCheckList for [GradCheck] {
    fn all_pass(&self, tol: f64) -> bool {
        self.iter().all(|c| c.passes(tol))
    }

    fn worst(&self) -> f64 {
        self.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}
