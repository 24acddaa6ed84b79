//! Training protocol and evaluation: 64/16/20 random splits, mini-batch
//! Adam on MSE with early stopping, repeated random-split cross-validation
//! and the report artifacts.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingData;
use crate::error::ensure;
use crate::grid::{export_image, Colormap, Grid2D};
use crate::metrics::{difference_image, soft_dice, FiveNumberSummary};
use crate::nn::{adam_step, AdamConfig, AdamState, Tape, Tensor4};
use crate::seed::{self, stream};
use crate::unet::{build_unet, Architecture, UNetConfig, UNetModel};
use crate::{Error, Result};

/// Smallest dataset [`split_dataset`] accepts.
pub const MIN_SPLIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// `round(pct * n / 100)`, halves rounded up, in exact integer arithmetic.
fn percent_of(n: usize, pct: usize) -> usize {
    (pct * n + 50) / 100
}

/// Shuffles `0..n` with `seed` and cuts it into 64% train, 16% validation
/// and the remainder test.
pub fn split_dataset(n: usize, seed: u64) -> Result<SplitSpec> {
    ensure!(
        n >= MIN_SPLIT_SAMPLES,
        "need at least {MIN_SPLIT_SAMPLES} samples to split, got {n}"
    );
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_train = percent_of(n, 64);
    let n_val = percent_of(n, 16);
    let test_idx = idx.split_off(n_train + n_val);
    let val_idx = idx.split_off(n_train);
    Ok(SplitSpec {
        train_idx: idx,
        val_idx,
        test_idx,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    pub n_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: 10,
            lr: 1e-3,
            seed: 0,
            n_folds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(self.n_folds >= 1, "n_folds must be at least 1");
        ensure!(self.max_epochs >= 1, "max_epochs must be at least 1");
        ensure!(
            self.lr.is_finite() && self.lr >= 0.0,
            "lr must be finite and non-negative, got {}",
            self.lr
        );
        Ok(())
    }
}

/// Affine map between velocities and the network's `[0, 1]` target space,
/// fixed from the training targets of a fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v_min: f32,
    pub v_max: f32,
}

impl Normalization {
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a Grid2D>) -> Result<Self> {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for g in grids {
            let (a, b) = g.min_max();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        ensure!(lo.is_finite() && hi.is_finite(), "no targets to normalize");
        Ok(Self { v_min: lo, v_max: hi })
    }

    fn span(&self) -> f32 {
        if self.v_max > self.v_min {
            self.v_max - self.v_min
        } else {
            1.0
        }
    }

    pub fn normalize(&self, v: f32) -> f32 {
        (v - self.v_min) / self.span()
    }

    pub fn denormalize(&self, u: f32) -> f32 {
        self.v_min + u * self.span()
    }

    /// `grid` in m/s mapped to `[0, 1]`, clamped; the space test DSC is
    /// measured in.
    pub fn unit_grid(&self, grid: &Grid2D) -> Result<Grid2D> {
        grid.map(|v| self.normalize(v).clamp(0.0, 1.0))
    }
}

/// Per-fold outcome. Epoch indices count from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
    pub best_epoch: usize,
    pub test_sample_indices: Vec<usize>,
    pub test_dsc_per_sample: Vec<f64>,
    pub test_mse: f64,
    pub normalization: Normalization,
    /// Normalized `(prediction, truth)` per test sample, kept in memory for
    /// difference images.
    #[serde(skip)]
    pub test_predictions: Vec<(Grid2D, Grid2D)>,
}

impl FoldResult {
    /// Validation MSE of the restored parameters.
    pub fn final_val_mse(&self) -> f64 {
        self.val_loss_curve[self.best_epoch]
    }
}

fn stack_inputs(data: &TrainingData, idx: &[usize]) -> Result<Tensor4<f32>> {
    let items: Vec<&Tensor4<f32>> = idx.iter().map(|&i| &data.inputs[i]).collect();
    Tensor4::stack(&items)
}

fn stack_targets(data: &TrainingData, idx: &[usize], norm: &Normalization) -> Result<Tensor4<f32>> {
    let t = &data.targets[idx[0]];
    let mut values = Vec::with_capacity(idx.len() * t.values().len());
    for &i in idx {
        values.extend(data.targets[i].values().iter().map(|&v| norm.normalize(v)));
    }
    Tensor4::new([idx.len(), 1, t.nz(), t.nx()], values)
}

/// Mean squared error of the model over `idx`, evaluated in batches.
fn evaluate_mse(
    model: &UNetModel<f32>,
    data: &TrainingData,
    idx: &[usize],
    norm: &Normalization,
    batch_size: usize,
) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size) {
        let pred = model.predict(&stack_inputs(data, chunk)?)?;
        let target = stack_targets(data, chunk, norm)?;
        for (&p, &t) in pred.values().iter().zip(target.values()) {
            let d = p as f64 - t as f64;
            sum += d * d;
        }
        count += target.len();
    }
    Ok(sum / count as f64)
}

fn is_non_finite(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Trains `model` on `split.train_idx`, early-stopping on the validation
/// MSE, restores the best parameters and scores every test sample.
///
/// Mini-batches come from a shuffle seeded by `cfg.seed`; the last partial
/// batch of an epoch is kept.
pub fn train_fold(
    model: &mut UNetModel<f32>,
    split: &SplitSpec,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    cfg.validate()?;
    ensure!(!split.train_idx.is_empty(), "training split is empty");
    ensure!(!split.val_idx.is_empty(), "validation split is empty");
    ensure!(!split.test_idx.is_empty(), "test split is empty");
    let n = data.len();
    for &i in split.train_idx.iter().chain(&split.val_idx).chain(&split.test_idx) {
        ensure!(i < n, "split index {i} out of range for {n} samples");
    }
    let (h, w) = model.config.input_hw;
    let s = data.inputs[0].shape();
    if s[1..] != [model.config.in_channels, h, w] {
        return Err(Error::Shape(format!(
            "network expects (n, {}, {h}, {w}) inputs, dataset provides {s:?}",
            model.config.in_channels
        )));
    }

    let norm = Normalization::fit(split.train_idx.iter().map(|&i| &data.targets[i]))?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = seed::rng(seed::derive_seed(cfg.seed, stream::SHUFFLE));
    let mut order = split.train_idx.clone();
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.values());

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0f64;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = || Error::Diverged { epoch, batch: b };
            let x = stack_inputs(data, chunk)?;
            let t = stack_targets(data, chunk, &norm)?;
            model.params.zero_grads();
            let mut tape = Tape::new();
            let xv = tape.input(x, false)?;
            let tv = tape.input(t, false)?;
            let step = (|| -> Result<f64> {
                let y = model.forward(&mut tape, xv)?;
                let loss = tape.mse(y, tv)?;
                let value = tape.value(loss).item()? as f64;
                tape.backward(loss, &mut model.params)?;
                Ok(value)
            })();
            let loss = match step {
                Ok(v) if v.is_finite() => v,
                Ok(_) => return Err(diverged()),
                Err(e) if is_non_finite(&e) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            adam_step(&mut model.params, &mut adam)?;
            epoch_sum += loss * chunk.len() as f64;
        }
        train_curve.push(epoch_sum / order.len() as f64);
        let val = evaluate_mse(model, data, &split.val_idx, &norm, cfg.batch_size)
            .map_err(|e| if is_non_finite(&e) { Error::Diverged { epoch, batch: 0 } } else { e })?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        val_curve.push(val);
        log::debug!("epoch {epoch}: train {:.6e} val {val:.6e}", train_curve[epoch]);
        if val < best.0 {
            best = (val, epoch, model.params.values());
        } else if epoch - best.1 >= cfg.early_stop_patience {
            break;
        }
    }
    model.params.set_values(best.2)?;

    let mut dsc = Vec::with_capacity(split.test_idx.len());
    let mut preds = Vec::with_capacity(split.test_idx.len());
    let mut sq = 0.0f64;
    let mut cells = 0usize;
    for chunk in split.test_idx.chunks(cfg.batch_size) {
        let pred = model.predict(&stack_inputs(data, chunk)?)?;
        for (k, &i) in chunk.iter().enumerate() {
            let truth = &data.targets[i];
            let p = pred.sample(k);
            for (&pv, &tv) in p.iter().zip(truth.values()) {
                let d = pv as f64 - norm.normalize(tv) as f64;
                sq += d * d;
            }
            cells += p.len();
            let pg = Grid2D::new(
                truth.nx(),
                truth.nz(),
                truth.dx(),
                p.iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
            )?;
            let tg = norm.unit_grid(truth)?;
            dsc.push(soft_dice(&pg, &tg)?);
            preds.push((pg, tg));
        }
    }
    Ok(FoldResult {
        fold_index: 0,
        train_loss_curve: train_curve,
        val_loss_curve: val_curve,
        best_epoch: best.1,
        test_sample_indices: split.test_idx.clone(),
        test_dsc_per_sample: dsc,
        test_mse: sq / cells as f64,
        normalization: norm,
        test_predictions: preds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub architecture: Architecture,
    pub network: UNetConfig,
    pub training: TrainConfig,
    pub n_samples: usize,
    pub parameter_count: usize,
    pub fold_results: Vec<FoldResult>,
    /// Mean over folds of the validation MSE at each fold's best epoch.
    pub mean_val_mse: f64,
    /// Five-number summary of each fold's test DSC values.
    pub dsc_summary: Vec<FiveNumberSummary>,
    /// Summary of every test DSC of every fold.
    pub overall_dsc: FiveNumberSummary,
    /// Interquartile range of the per-fold median DSC; smaller is more
    /// stable across folds.
    pub fold_median_dsc_iqr: f64,
}

impl CrossValReport {
    pub fn from_folds(
        network: UNetConfig,
        training: TrainConfig,
        n_samples: usize,
        parameter_count: usize,
        fold_results: Vec<FoldResult>,
    ) -> Result<Self> {
        ensure!(!fold_results.is_empty(), "no fold results");
        let mean_val_mse = fold_results.iter().map(|f| f.final_val_mse()).sum::<f64>()
            / fold_results.len() as f64;
        let dsc_summary = fold_results
            .iter()
            .map(|f| {
                FiveNumberSummary::of(&f.test_dsc_per_sample).ok_or_else(|| {
                    Error::Validation(format!("fold {} has no test DSC values", f.fold_index))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<f64> = fold_results
            .iter()
            .flat_map(|f| f.test_dsc_per_sample.iter().copied())
            .collect();
        let overall_dsc = FiveNumberSummary::of(&all).expect("nonempty, checked per fold");
        let medians: Vec<f64> = dsc_summary.iter().map(|s| s.median).collect();
        let fold_median_dsc_iqr = FiveNumberSummary::of(&medians).expect("nonempty").iqr();
        Ok(Self {
            architecture: network.architecture(),
            network,
            training,
            n_samples,
            parameter_count,
            fold_results,
            mean_val_mse,
            dsc_summary,
            overall_dsc,
            fold_median_dsc_iqr,
        })
    }

    pub fn median_test_dsc(&self) -> f64 {
        self.overall_dsc.median
    }
}

/// Seeds of fold `fold` derived from the run seed: split, initialization
/// and batch shuffling each get their own stream.
pub fn fold_seed(run_seed: u64, fold: usize) -> u64 {
    seed::derive_seed(run_seed, fold as u64)
}

/// Repeated random-split cross-validation. Each fold draws a fresh split
/// and a fresh initialization; `on_fold` sees every trained model and its
/// result as soon as the fold completes.
pub fn cross_validate_with(
    network: &UNetConfig,
    data: &TrainingData,
    cfg: &TrainConfig,
    mut on_fold: impl FnMut(&UNetModel<f32>, &FoldResult) -> Result<()>,
) -> Result<CrossValReport> {
    network.validate()?;
    cfg.validate()?;
    let mut results = Vec::with_capacity(cfg.n_folds);
    let mut parameter_count = 0;
    for fold in 0..cfg.n_folds {
        let run = || -> Result<(UNetModel<f32>, FoldResult)> {
            let fs = fold_seed(cfg.seed, fold);
            let split = split_dataset(data.len(), seed::derive_seed(fs, stream::SPLIT))?;
            let mut model = build_unet::<f32>(*network, seed::derive_seed(fs, stream::INIT))?;
            let fold_cfg = TrainConfig { seed: fs, ..*cfg };
            let mut result = train_fold(&mut model, &split, data, &fold_cfg)?;
            result.fold_index = fold;
            Ok((model, result))
        };
        let (model, result) = run().map_err(|e| e.in_fold(fold))?;
        log::info!(
            "fold {fold}: best epoch {} val mse {:.4e} median dsc {:.4}",
            result.best_epoch,
            result.final_val_mse(),
            crate::metrics::median(&result.test_dsc_per_sample).unwrap_or(f64::NAN)
        );
        on_fold(&model, &result).map_err(|e| e.in_fold(fold))?;
        parameter_count = model.count_params();
        results.push(result);
    }
    CrossValReport::from_folds(*network, *cfg, data.len(), parameter_count, results)
}

pub fn cross_validate(
    network: &UNetConfig,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<CrossValReport> {
    cross_validate_with(network, data, cfg, |_, _| Ok(()))
}

pub const LOSS_CURVES_HEADER: &str = "fold,epoch,train_mse,val_mse\n";
pub const DSC_FOLDS_HEADER: &str = "fold,sample,dsc\n";
pub const REPORT_FILE: &str = "report.json";
pub const LOSS_CURVES_FILE: &str = "loss_curves.csv";
pub const DSC_FOLDS_FILE: &str = "dsc_folds.csv";

pub fn loss_curves_csv(report: &CrossValReport) -> String {
    let mut s = String::from(LOSS_CURVES_HEADER);
    for f in &report.fold_results {
        for (e, (t, v)) in f.train_loss_curve.iter().zip(&f.val_loss_curve).enumerate() {
            let _ = writeln!(s, "{},{e},{t},{v}", f.fold_index);
        }
    }
    s
}

pub fn dsc_folds_csv(report: &CrossValReport) -> String {
    let mut s = String::from(DSC_FOLDS_HEADER);
    for f in &report.fold_results {
        for (i, d) in f.test_sample_indices.iter().zip(&f.test_dsc_per_sample) {
            let _ = writeln!(s, "{},{i},{d}", f.fold_index);
        }
    }
    s
}

pub fn report_json(report: &CrossValReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// `(fold, position in fold, dsc)`.
type SampleRef = (usize, usize, f64);

/// The `k` best and `k` worst test samples with predictions kept in
/// memory. Ties go to the earlier fold and sample.
fn extreme_samples(report: &CrossValReport, k: usize) -> (Vec<SampleRef>, Vec<SampleRef>) {
    let mut all: Vec<SampleRef> = report
        .fold_results
        .iter()
        .enumerate()
        .filter(|(_, f)| f.test_predictions.len() == f.test_dsc_per_sample.len())
        .flat_map(|(fi, f)| f.test_dsc_per_sample.iter().enumerate().map(move |(j, &d)| (fi, j, d)))
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let best: Vec<_> = all.iter().take(k).copied().collect();
    let mut worst: Vec<_> = all.iter().rev().take(k.min(all.len().saturating_sub(best.len()))).copied().collect();
    worst.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    (best, worst)
}

/// Writes `report.json`, `loss_curves.csv`, `dsc_folds.csv` and, when
/// predictions are available, difference images of the three best and
/// three worst test samples (`diff_best_1_fold2_sample17.pgm`, ...).
pub fn emit_report(report: &CrossValReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(REPORT_FILE, report_json(report))?;
    write(LOSS_CURVES_FILE, loss_curves_csv(report))?;
    write(DSC_FOLDS_FILE, dsc_folds_csv(report))?;
    let (best, worst) = extreme_samples(report, 3);
    for (label, list) in [("best", best), ("worst", worst)] {
        for (rank, (fi, j, _)) in list.into_iter().enumerate() {
            let f = &report.fold_results[fi];
            let (pred, truth) = &f.test_predictions[j];
            let diff = difference_image(pred, truth)?;
            let name = format!(
                "diff_{label}_{}_fold{}_sample{}.pgm",
                rank + 1,
                f.fold_index,
                f.test_sample_indices[j]
            );
            export_image(&diff, out_dir.join(name), Colormap::SymmetricGray)?;
        }
    }
    Ok(())
}
