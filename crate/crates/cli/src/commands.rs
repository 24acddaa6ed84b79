use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use velinv::dataset::{self, DatasetManifest};
use velinv::geology::GeologyConfig;
use velinv::grid::{export_image, read_grid, write_grid, Colormap, Grid2D};
use velinv::metrics::{binary_dice, difference_image, soft_dice};
use velinv::nn::{load_checkpoint, save_checkpoint};
use velinv::train::{self, CrossValReport, FoldResult, Normalization};
use velinv::unet::{build_unet, UNetConfig, UNetModel};
use velinv::wave::{read_shots, resample_gather_to_grid, AcquisitionConfig};

use crate::config::{self, ConfigSource, PipelineConfig};
use crate::{CliError, GenModelsArgs, GenShotsArgs, PredictArgs, ReportArgs, TrainArgs};

pub const RUN_CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".velinv.lock";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CHECKPOINT_META_VERSION: u32 = 1;

pub fn checkpoint_file(fold: usize) -> String {
    format!("{CHECKPOINT_DIR}/fold{fold:02}.nncp")
}

/// Sidecar of a checkpoint: everything prediction needs besides the
/// weights. Stored next to it with a `.json` extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub fold_index: usize,
    pub best_epoch: usize,
    pub network: UNetConfig,
    pub normalization: Normalization,
    /// Cell size of the training models (m).
    pub dx: f32,
    pub acquisition: AcquisitionConfig,
    /// Shape of every training gather.
    pub n_receivers: usize,
    pub nt: usize,
}

impl CheckpointMeta {
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }
}

pub fn gen_models(cfg: &PipelineConfig, args: &GenModelsArgs) -> Result<(), CliError> {
    let mut geology = cfg.geology.clone();
    if let Some(p) = args.preset {
        geology = GeologyConfig {
            dx: geology.dx,
            v_floor: geology.v_floor,
            v_ceil: geology.v_ceil,
            ..GeologyConfig::preset(p).with_extent(geology.nx, geology.nz)
        };
        geology.validate()?;
    }
    let seed = args.seed.unwrap_or(cfg.global_seed);
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.dataset_dir.clone());
    dataset::generate_dataset(&geology, args.n, seed, &out)?;
    println!("{}", DatasetManifest::path(&out).display());
    Ok(())
}

pub fn gen_shots(cfg: &PipelineConfig, args: &GenShotsArgs) -> Result<(), CliError> {
    let dir = args.dataset.clone().unwrap_or_else(|| cfg.paths.dataset_dir.clone());
    let manifest = DatasetManifest::load(&dir)?;
    dataset::dataset_geometry(&manifest.geology, &cfg.acquisition)?;
    let seed = args.seed.unwrap_or(cfg.global_seed);
    let summary = dataset::generate_shots(&dir, &cfg.acquisition, seed)?;
    println!(
        "{} generated, {} verified and skipped, {} failed",
        summary.generated.len(),
        summary.skipped.len(),
        summary.failed.len()
    );
    if summary.failed.is_empty() {
        return Ok(());
    }
    for (_, e) in &summary.failed {
        eprintln!("{e}");
    }
    let idx: Vec<usize> = summary.failed.iter().map(|(i, _)| *i).collect();
    let code = if summary.failed.iter().all(|(_, e)| e.is_validation()) {
        crate::EXIT_VALIDATION
    } else {
        crate::EXIT_RUNTIME
    };
    Err(CliError {
        code,
        message: format!("shot generation failed for samples {}", dataset::format_indices(&idx)),
    })
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(run_dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", run_dir.display())))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::runtime(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::runtime(format!("cannot create {}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn train_sets(args: &TrainArgs) -> Vec<(String, String)> {
    let mut sets = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push((k.to_string(), v));
        }
    };
    push("training.n_folds", args.n_folds.map(|v| v.to_string()));
    push("training.max_epochs", args.max_epochs.map(|v| v.to_string()));
    push("training.batch_size", args.batch_size.map(|v| v.to_string()));
    push("training.early_stop_patience", args.early_stop_patience.map(|v| v.to_string()));
    push("training.lr", args.lr.map(|v| v.to_string()));
    push("network.outer_skip", Some(args.arch.outer_skip().to_string()));
    push("global_seed", args.seed.map(|v| v.to_string()));
    sets
}

pub fn train(source: &ConfigSource, args: &TrainArgs) -> Result<(), CliError> {
    let mut source = source.clone();
    source.sets.extend(train_sets(args));
    let mut cfg = source.load()?;
    cfg.training.seed = cfg.global_seed;
    if let Some(d) = &args.dataset {
        cfg.paths.dataset_dir = d.clone();
    }
    if let Some(r) = &args.run_dir {
        cfg.paths.run_dir = r.clone();
    }
    let manifest = DatasetManifest::load(&cfg.paths.dataset_dir)?;
    let missing = manifest.missing_shots(&cfg.paths.dataset_dir);
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "dataset {} is incomplete; samples without shots: {}",
            cfg.paths.dataset_dir.display(),
            dataset::format_indices(&missing)
        )));
    }
    let shots = manifest
        .shots
        .clone()
        .ok_or_else(|| CliError::validation("dataset has no shot record"))?;
    if shots.geometry.n_shots() != cfg.network.in_channels {
        return Err(CliError::validation(format!(
            "dataset has {} shots per sample, network expects {}",
            shots.geometry.n_shots(),
            cfg.network.in_channels
        )));
    }
    if (manifest.geology.nz, manifest.geology.nx) != cfg.network.input_hw {
        return Err(CliError::validation(format!(
            "dataset models are {}x{} (nz x nx), network input is {:?}",
            manifest.geology.nz, manifest.geology.nx, cfg.network.input_hw
        )));
    }

    let run_dir = cfg.paths.run_dir.clone();
    let _lock = RunLock::acquire(&run_dir)?;
    write_text(&run_dir.join(RUN_CONFIG_FILE), &config::to_json(&cfg))?;
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", ckpt_dir.display())))?;

    let data = dataset::load_training_data(&cfg.paths.dataset_dir, cfg.network.input_hw)?;
    log::info!(
        "training {} on {} samples, {} folds",
        cfg.network.architecture(),
        data.len(),
        cfg.training.n_folds
    );
    let report = train::cross_validate_with(&cfg.network, &data, &cfg.training, |model, result| {
        save_fold(&run_dir, model, result, &manifest, &shots.config, shots.geometry.nt)
    })?;
    train::emit_report(&report, &run_dir)?;
    println!("architecture {}", report.architecture);
    println!("mean validation MSE {:.6e}", report.mean_val_mse);
    println!("median test DSC {:.4}", report.median_test_dsc());
    Ok(())
}

fn save_fold(
    run_dir: &Path,
    model: &UNetModel<f32>,
    result: &FoldResult,
    manifest: &DatasetManifest,
    acquisition: &AcquisitionConfig,
    nt: usize,
) -> velinv::Result<()> {
    let path = run_dir.join(checkpoint_file(result.fold_index));
    save_checkpoint(&model.params, &path)?;
    let shots = manifest.shots.as_ref().expect("checked before training");
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_META_VERSION,
        fold_index: result.fold_index,
        best_epoch: result.best_epoch,
        network: model.config,
        normalization: result.normalization,
        dx: manifest.geology.dx,
        acquisition: acquisition.clone(),
        n_receivers: shots.geometry.n_receivers(),
        nt,
    };
    let meta_path = CheckpointMeta::path_for(&path);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(&meta_path, text).map_err(|e| velinv::Error::Io {
        path: meta_path.clone(),
        source: e,
    })
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} {} does not exist", path.display())))
    }
}

pub fn load_checkpoint_meta(checkpoint: &Path) -> Result<CheckpointMeta, CliError> {
    require_file(checkpoint, "checkpoint")?;
    let meta_path = CheckpointMeta::path_for(checkpoint);
    require_file(&meta_path, "checkpoint metadata")?;
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("invalid checkpoint metadata {}: {e}", meta_path.display())))?;
    if meta.format_version != CHECKPOINT_META_VERSION {
        return Err(CliError::validation(format!(
            "checkpoint metadata version {} is not supported (expected {CHECKPOINT_META_VERSION})",
            meta.format_version
        )));
    }
    meta.network.validate()?;
    Ok(meta)
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let meta = load_checkpoint_meta(&args.checkpoint)?;
    require_file(&args.shots, "shot file")?;
    if let Some(t) = &args.truth {
        require_file(t, "ground-truth model")?;
    }
    let mut model = build_unet::<f32>(meta.network, 0)?;
    load_checkpoint(&mut model.params, &args.checkpoint)?;

    let gathers = read_shots(&args.shots)?;
    if gathers.len() != meta.network.in_channels {
        return Err(CliError::validation(format!(
            "{} holds {} shots, the checkpoint expects {}",
            args.shots.display(),
            gathers.len(),
            meta.network.in_channels
        )));
    }
    if let Some(g) = gathers.iter().find(|g| (g.n_receivers, g.nt) != (meta.n_receivers, meta.nt)) {
        return Err(CliError::validation(format!(
            "shot {} has {} receivers x {} samples, the checkpoint was trained on {} x {}",
            g.shot_index, g.n_receivers, g.nt, meta.n_receivers, meta.nt
        )));
    }
    let (h, w) = meta.network.input_hw;
    let input = resample_gather_to_grid(&gathers, h, w)?;
    let out = model.predict(&input)?;
    let unit = out.sample(0);
    let norm = meta.normalization;
    let velocity = Grid2D::new(w, h, meta.dx, unit.iter().map(|&u| norm.denormalize(u)).collect())?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    write_grid(&velocity, args.out.join("prediction.vgrd"))?;
    export_image(&velocity, args.out.join("prediction.pgm"), Colormap::Gray)?;
    println!("{}", args.out.join("prediction.vgrd").display());

    if let Some(truth_path) = &args.truth {
        let truth = read_grid(truth_path)?;
        if !truth.same_shape(&velocity) {
            return Err(CliError::validation(format!(
                "ground truth is {}x{}, prediction is {}x{}",
                truth.nx(),
                truth.nz(),
                velocity.nx(),
                velocity.nz()
            )));
        }
        let diff = difference_image(&velocity, &truth)?;
        write_grid(&diff, args.out.join("difference.vgrd"))?;
        export_image(&diff, args.out.join("difference.pgm"), Colormap::SymmetricGray)?;
        let p = Grid2D::new(w, h, meta.dx, unit.iter().map(|&u| u.clamp(0.0, 1.0)).collect())?;
        let t = norm.unit_grid(&truth)?;
        println!("soft DSC {:.4}", soft_dice(&p, &t)?);
        println!("binary DSC (0.5) {:.4}", binary_dice(&p, &t, 0.5)?);
    }
    Ok(())
}

pub fn load_report(run_dir: &Path) -> Result<CrossValReport, CliError> {
    let path = run_dir.join(train::REPORT_FILE);
    require_file(&path, "report")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("invalid report {}: {e}", path.display())))
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let reports = args
        .run_dirs
        .iter()
        .map(|d| load_report(d))
        .collect::<Result<Vec<_>, _>>()?;
    println!("run\tarchitecture\tfolds\tmean_val_mse\tmedian_dsc\tfold_median_iqr");
    for (dir, r) in args.run_dirs.iter().zip(&reports) {
        write_text(&dir.join(train::LOSS_CURVES_FILE), &train::loss_curves_csv(r))?;
        write_text(&dir.join(train::DSC_FOLDS_FILE), &train::dsc_folds_csv(r))?;
        println!(
            "{}\t{}\t{}\t{:.6e}\t{:.4}\t{:.4}",
            dir.display(),
            r.architecture,
            r.fold_results.len(),
            r.mean_val_mse,
            r.median_test_dsc(),
            r.fold_median_dsc_iqr
        );
    }
    for (dir, r) in args.run_dirs.iter().zip(&reports) {
        println!("\n{} ({})", dir.display(), r.architecture);
        println!("fold\tmin\tq1\tmedian\tq3\tmax");
        for (f, s) in r.fold_results.iter().zip(&r.dsc_summary) {
            println!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                f.fold_index, s.min, s.q1, s.median, s.q3, s.max
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        let e = RunLock::acquire(dir.path()).unwrap_err();
        assert_eq!(e.code, crate::EXIT_RUNTIME);
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_file(3), "checkpoints/fold03.nncp");
        assert_eq!(
            CheckpointMeta::path_for(Path::new("r/checkpoints/fold03.nncp")),
            PathBuf::from("r/checkpoints/fold03.json")
        );
    }

    #[test]
    fn missing_checkpoint_is_a_validation_error() {
        let e = load_checkpoint_meta(Path::new("/nonexistent/fold00.nncp")).unwrap_err();
        assert_eq!(e.code, crate::EXIT_VALIDATION);
    }
}
