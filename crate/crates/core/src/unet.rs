//! UNet and UNetMod.
//!
//! Both variants share the same encoder, bottleneck and decoder. UNetMod
//! drops the skip connection between the shallowest encoder level and the
//! last decoder level (`outer_skip = false`), so that decoder block sees
//! only the upsampled path.
//!
//! ```text
//! level l encoder : conv3x3+ReLU -> conv3x3+ReLU -> (skip_l) -> maxpool2
//! bottleneck      : conv3x3+ReLU -> conv3x3+ReLU
//! level l decoder : upsample2 -> conv3x3+ReLU -> concat(skip_l) -> conv3x3+ReLU
//! head            : conv3x3 to one channel, linear
//! ```
//!
//! Level `l` carries `base_channels * 2^l` channels.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::nn::{ParamId, ParamStore, Scalar, Tape, Tensor4, Var};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Skip connections at every level.
    Unet,
    /// Outermost skip connection removed.
    UnetMod,
}

impl Architecture {
    pub fn outer_skip(self) -> bool {
        matches!(self, Architecture::Unet)
    }

    pub fn from_outer_skip(outer_skip: bool) -> Self {
        if outer_skip {
            Architecture::Unet
        } else {
            Architecture::UnetMod
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Unet => "unet",
            Architecture::UnetMod => "unet-mod",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unet" => Ok(Architecture::Unet),
            "unet-mod" | "unet_mod" | "unetmod" => Ok(Architecture::UnetMod),
            other => Err(format!("unknown architecture {other:?} (expected unet|unet-mod)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// Input channels, one per shot.
    pub in_channels: usize,
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
    pub outer_skip: bool,
    /// Input `(height, width)`.
    pub input_hw: (usize, usize),
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 8,
            depth: 4,
            base_channels: 16,
            outer_skip: true,
            input_hw: (128, 128),
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, "depth must be at least 1");
        ensure!(self.base_channels >= 1, "base_channels must be at least 1");
        ensure!(self.in_channels >= 1, "in_channels must be at least 1");
        let (h, w) = self.input_hw;
        let m = 1usize
            .checked_shl(self.depth as u32)
            .filter(|&m| m <= h.max(w).max(1))
            .ok_or_else(|| Error::Validation(format!("depth {} is too large", self.depth)))?;
        ensure!(
            h > 0 && w > 0 && h % m == 0 && w % m == 0,
            "input {h}x{w} is not divisible by 2^depth = {m}"
        );
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::from_outer_skip(self.outer_skip)
    }

    /// Channels at level `l`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layers {
    encoder: Vec<[ConvIds; 2]>,
    bottleneck: [ConvIds; 2],
    /// `(up_conv, merge_conv)` per level, index = level.
    decoder: Vec<[ConvIds; 2]>,
    head: ConvIds,
}

/// A built network: configuration plus its ordered parameters.
#[derive(Debug, Clone)]
pub struct UNetModel<T: Scalar = f32> {
    pub config: UNetConfig,
    pub params: ParamStore<T>,
    layers: Layers,
}

/// Every intermediate of one forward pass, for shape introspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Skip activations, shallowest first.
    pub encoder: Vec<Var>,
    pub bottleneck: Var,
    /// Decoder block outputs, deepest first.
    pub decoder: Vec<Var>,
    pub output: Var,
}

fn add_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> Result<ConvIds> {
    let std = (2.0 / (c_in as f64 * 9.0)).sqrt();
    let weight = Tensor4::from_fn([c_out, c_in, 3, 3], |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64(z * std)
    });
    Ok(ConvIds {
        weight: store.add(format!("{name}.weight"), weight)?,
        bias: store.add(format!("{name}.bias"), Tensor4::zeros([c_out, 1, 1, 1]))?,
    })
}

/// Builds a model with He-normal weights and zero biases drawn from `seed`.
pub fn build_unet<T: Scalar>(config: UNetConfig, seed: u64) -> Result<UNetModel<T>> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let mut store = ParamStore::new();
    let c = |l: usize| config.channels(l);

    let mut encoder = Vec::with_capacity(config.depth);
    for l in 0..config.depth {
        let c_in = if l == 0 { config.in_channels } else { c(l - 1) };
        encoder.push([
            add_conv(&mut store, &mut rng, &format!("enc{l}.conv1"), c_in, c(l))?,
            add_conv(&mut store, &mut rng, &format!("enc{l}.conv2"), c(l), c(l))?,
        ]);
    }
    let d = config.depth;
    let bottleneck = [
        add_conv(&mut store, &mut rng, "bottleneck.conv1", c(d - 1), c(d))?,
        add_conv(&mut store, &mut rng, "bottleneck.conv2", c(d), c(d))?,
    ];
    let mut decoder: Vec<Option<[ConvIds; 2]>> = vec![None; d];
    for l in (0..d).rev() {
        let up = add_conv(&mut store, &mut rng, &format!("dec{l}.up"), c(l + 1), c(l))?;
        let merged_in = if l == 0 && !config.outer_skip { c(l) } else { 2 * c(l) };
        let merge = add_conv(&mut store, &mut rng, &format!("dec{l}.conv"), merged_in, c(l))?;
        decoder[l] = Some([up, merge]);
    }
    let head = add_conv(&mut store, &mut rng, "head", c(0), 1)?;
    Ok(UNetModel {
        config,
        params: store,
        layers: Layers {
            encoder,
            bottleneck,
            decoder: decoder.into_iter().map(|x| x.expect("every level built")).collect(),
            head,
        },
    })
}

impl<T: Scalar> UNetModel<T> {
    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config,
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    fn conv(&self, tape: &mut Tape<T>, x: Var, ids: ConvIds) -> Result<Var> {
        let w = tape.param(&self.params, ids.weight);
        let b = tape.param(&self.params, ids.bias);
        tape.conv2d(x, w, b)
    }

    fn conv_relu(&self, tape: &mut Tape<T>, x: Var, ids: ConvIds) -> Result<Var> {
        let y = self.conv(tape, x, ids)?;
        tape.relu(y)
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let (h, w) = self.config.input_hw;
        if shape[1..] != [self.config.in_channels, h, w] || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "UNet expects input (n, {}, {h}, {w}), got {shape:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `input` on `tape`, returning every
    /// intermediate of interest.
    pub fn forward_traced(&self, tape: &mut Tape<T>, input: Var) -> Result<ForwardTrace> {
        self.check_input(tape.shape(input))?;
        let mut x = input;
        let mut skips = Vec::with_capacity(self.config.depth);
        for ids in &self.layers.encoder {
            x = self.conv_relu(tape, x, ids[0])?;
            x = self.conv_relu(tape, x, ids[1])?;
            skips.push(x);
            x = tape.maxpool2(x)?;
        }
        x = self.conv_relu(tape, x, self.layers.bottleneck[0])?;
        x = self.conv_relu(tape, x, self.layers.bottleneck[1])?;
        let bottleneck = x;
        let mut decoder = Vec::with_capacity(self.config.depth);
        for l in (0..self.config.depth).rev() {
            let [up, merge] = self.layers.decoder[l];
            x = tape.upsample2(x)?;
            x = self.conv_relu(tape, x, up)?;
            if l > 0 || self.config.outer_skip {
                x = tape.concat(x, skips[l])?;
            }
            x = self.conv_relu(tape, x, merge)?;
            decoder.push(x);
        }
        let output = self.conv(tape, x, self.layers.head)?;
        Ok(ForwardTrace {
            encoder: skips,
            bottleneck,
            decoder,
            output,
        })
    }

    /// Forward pass producing an `(n, 1, h, w)` prediction node.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        Ok(self.forward_traced(tape, input)?.output)
    }

    /// Gradient-free prediction.
    pub fn predict(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let x = tape.input(input.clone(), false)?;
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Names of the head parameters, which map features to the output.
    pub fn head_param_names(&self) -> [&str; 2] {
        [
            &self.params.get(self.layers.head.weight).name,
            &self.params.get(self.layers.head.bias).name,
        ]
    }
}
