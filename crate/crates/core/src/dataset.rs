//! Dataset directories: generated velocity models, their simulated shot
//! gathers and a `manifest.json` tying them together.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/models/0000.vgrd ...
//! <dir>/shots/0000.sgth ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ensure;
use crate::geology::{generate_model, GeologyConfig, GeologyPreset};
use crate::grid::{read_grid, write_grid, Grid2D};
use crate::nn::Tensor4;
use crate::wave::{
    encode_shots, max_stable_dt, read_shots, resample_gather_to_grid, simulate_survey,
    AcquisitionConfig, AcquisitionGeometry,
};
use crate::{seed, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    /// Relative to the dataset directory.
    pub model_path: String,
    pub shots_path: Option<String>,
    /// Lowercase hex SHA-256 of the shot file.
    pub shots_sha256: Option<String>,
}

/// How the shots of a dataset were simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotRecord {
    pub config: AcquisitionConfig,
    pub geometry: AcquisitionGeometry,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dataset_id: String,
    pub n_samples: usize,
    pub geology_preset: GeologyPreset,
    pub seed: u64,
    pub geology: GeologyConfig,
    pub shots: Option<ShotRecord>,
    pub sample_entries: Vec<SampleEntry>,
}

pub fn model_file_name(index: usize) -> String {
    format!("models/{index:04}.vgrd")
}

pub fn shots_file_name(index: usize) -> String {
    format!("shots/{index:04}.sgth")
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed::derive_seed(seed, index as u64)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl DatasetManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = Self::path(dir.as_ref());
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                path,
                found: m.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        m.validate()
            .map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(m)
    }

    /// Pretty JSON with a trailing newline; field order is fixed, so equal
    /// manifests serialize to equal bytes.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = Self::path(dir.as_ref());
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_samples == self.sample_entries.len(),
            "n_samples is {} but {} entries are listed",
            self.n_samples,
            self.sample_entries.len()
        );
        self.geology.validate()
    }

    /// Indices of samples whose shot file is not recorded or not on disk.
    pub fn missing_shots(&self, dir: impl AsRef<Path>) -> Vec<usize> {
        let dir = dir.as_ref();
        self.sample_entries
            .iter()
            .enumerate()
            .filter(|(_, e)| match &e.shots_path {
                Some(p) => !dir.join(p).is_file(),
                None => true,
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Writes `n` models drawn from `config` plus a manifest into `out_dir`.
/// Sample `i` uses [`sample_seed`]`(seed, i)`, so the result is independent
/// of generation order.
pub fn generate_dataset(
    config: &GeologyConfig,
    n: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    config.validate()?;
    ensure!(n >= 1, "a dataset needs at least one sample");
    ensure!(n <= 10_000, "at most 10000 samples are supported, got {n}");
    let out_dir = out_dir.as_ref();
    create_dir(&out_dir.join("models"))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let model = generate_model(config, sample_seed(seed, i)).map_err(|e| e.in_sample(i))?;
        let rel = model_file_name(i);
        write_grid(&model, out_dir.join(&rel)).map_err(|e| e.in_sample(i))?;
        entries.push(SampleEntry {
            model_path: rel,
            shots_path: None,
            shots_sha256: None,
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        dataset_id: format!("{}-n{n}-seed{seed:016x}", config.preset),
        n_samples: n,
        geology_preset: config.preset,
        seed,
        geology: config.clone(),
        shots: None,
        sample_entries: entries,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Geometry used for every model of a dataset generated from `geology`.
pub fn dataset_geometry(
    geology: &GeologyConfig,
    acquisition: &AcquisitionConfig,
) -> Result<AcquisitionGeometry> {
    let g = acquisition.geometry(
        geology.nx,
        geology.nz,
        geology.dx as f64,
        geology.v_floor as f64,
        geology.v_ceil as f64,
    )?;
    let limit = max_stable_dt(geology.dx as f64, geology.v_ceil as f64);
    if g.dt > limit {
        return Err(Error::Cfl {
            dt: g.dt,
            max_stable_dt: limit,
        });
    }
    acquisition.sponge.validate(geology.nx, geology.nz)?;
    Ok(g)
}

/// Outcome of [`generate_shots`].
#[derive(Debug, Default)]
pub struct ShotsSummary {
    pub generated: Vec<usize>,
    pub skipped: Vec<usize>,
    pub failed: Vec<(usize, Error)>,
}

/// Simulates the shots of every sample in the dataset at `dir`, writing
/// `shots/NNNN.sgth` and recording each file's checksum in the manifest.
///
/// Samples whose shot file exists and matches its recorded checksum are
/// skipped, so an interrupted run resumes where it stopped. Changing the
/// acquisition invalidates every existing shot file. A failing sample does
/// not stop the others; failures are collected in the summary.
pub fn generate_shots(
    dir: impl AsRef<Path>,
    acquisition: &AcquisitionConfig,
    seed: u64,
) -> Result<ShotsSummary> {
    let dir = dir.as_ref();
    let mut manifest = DatasetManifest::load(dir)?;
    let geometry = dataset_geometry(&manifest.geology, acquisition)?;
    let record = ShotRecord {
        config: acquisition.clone(),
        geometry: geometry.clone(),
        seed,
    };
    if manifest.shots.as_ref() != Some(&record) {
        for e in &mut manifest.sample_entries {
            e.shots_path = None;
            e.shots_sha256 = None;
        }
        manifest.shots = Some(record);
        manifest.save(dir)?;
    }
    create_dir(&dir.join("shots"))?;

    let mut summary = ShotsSummary::default();
    for i in 0..manifest.n_samples {
        let rel = shots_file_name(i);
        let path = dir.join(&rel);
        let entry = &manifest.sample_entries[i];
        if let (Some(p), Some(h)) = (&entry.shots_path, &entry.shots_sha256) {
            if p == &rel {
                if let Ok(bytes) = std::fs::read(&path) {
                    if &sha256_hex(&bytes) == h {
                        summary.skipped.push(i);
                        continue;
                    }
                    log::warn!("sample {i}: {} fails verification, regenerating", path.display());
                }
            }
        }
        let result = (|| -> Result<String> {
            let model = read_grid(dir.join(&entry.model_path))?;
            let gathers = simulate_survey(&model, &geometry, &acquisition.sponge)?;
            let bytes = encode_shots(&gathers)?;
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok(sha256_hex(&bytes))
        })();
        match result {
            Ok(hash) => {
                let entry = &mut manifest.sample_entries[i];
                entry.shots_path = Some(rel);
                entry.shots_sha256 = Some(hash);
                manifest.save(dir)?;
                summary.generated.push(i);
                log::info!("sample {i}: shots written");
            }
            Err(e) => {
                log::error!("sample {i}: {e}");
                summary.failed.push((i, e.in_sample(i)));
            }
        }
    }
    Ok(summary)
}

/// Network inputs and ground-truth models of a complete dataset.
#[derive(Debug, Clone)]
pub struct TrainingData {
    /// One `(1, n_shots, h, w)` tensor per sample.
    pub inputs: Vec<Tensor4<f32>>,
    /// Velocity models in m/s, each `w` x `h`.
    pub targets: Vec<Grid2D>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Builds training data from in-memory pairs, checking shapes.
    pub fn new(inputs: Vec<Tensor4<f32>>, targets: Vec<Grid2D>) -> Result<Self> {
        ensure!(
            inputs.len() == targets.len(),
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        );
        ensure!(!inputs.is_empty(), "no samples");
        let s = inputs[0].shape();
        for (i, (x, t)) in inputs.iter().zip(&targets).enumerate() {
            if x.shape() != s || s[0] != 1 || (t.nz(), t.nx()) != (s[2], s[3]) {
                return Err(Error::Shape(format!(
                    "sample {i}: input {:?} and target {}x{} do not match (1, c, h, w) = {s:?}",
                    x.shape(),
                    t.nx(),
                    t.nz()
                )));
            }
        }
        Ok(Self { inputs, targets })
    }
}

/// Loads every sample of the dataset at `dir`, resampling shots to
/// `input_hw`. Models must already be `input_hw` in size.
pub fn load_training_data(dir: impl AsRef<Path>, input_hw: (usize, usize)) -> Result<TrainingData> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::load(dir)?;
    let missing = manifest.missing_shots(dir);
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "dataset {} is incomplete: samples without shots: {}",
            dir.display(),
            format_indices(&missing)
        )));
    }
    let (h, w) = input_hw;
    let mut inputs = Vec::with_capacity(manifest.n_samples);
    let mut targets = Vec::with_capacity(manifest.n_samples);
    for (i, e) in manifest.sample_entries.iter().enumerate() {
        let model = read_grid(dir.join(&e.model_path)).map_err(|e| e.in_sample(i))?;
        let shots_path = e.shots_path.as_ref().expect("checked above");
        let gathers = read_shots(dir.join(shots_path)).map_err(|e| e.in_sample(i))?;
        inputs.push(resample_gather_to_grid(&gathers, h, w).map_err(|e| e.in_sample(i))?);
        targets.push(model);
    }
    TrainingData::new(inputs, targets)
}

/// `0, 3, 7` style list, truncated after 20 entries.
pub fn format_indices(indices: &[usize]) -> String {
    let mut s: Vec<String> = indices.iter().take(20).map(|i| i.to_string()).collect();
    if indices.len() > 20 {
        s.push(format!("... ({} total)", indices.len()));
    }
    s.join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::SpongeConfig;

    fn small_geology() -> GeologyConfig {
        GeologyConfig::simple().with_extent(32, 32)
    }

    fn small_acquisition() -> AcquisitionConfig {
        AcquisitionConfig {
            n_shots: 2,
            record_seconds: Some(0.1),
            sponge: SpongeConfig {
                width: 8,
                ..SpongeConfig::default()
            },
            ..AcquisitionConfig::default()
        }
    }

    #[test]
    fn sha256_known_answer() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn dataset_layout_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small_geology(), 5, 9, dir.path()).unwrap();
        assert_eq!(m.n_samples, 5);
        assert_eq!(m.sample_entries[3].model_path, "models/0003.vgrd");
        for e in &m.sample_entries {
            assert!(dir.path().join(&e.model_path).is_file());
        }
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
        assert_eq!(m.missing_shots(dir.path()), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sample_matches_direct_generation() {
        let dir = tempfile::tempdir().unwrap();
        let g = small_geology();
        generate_dataset(&g, 3, 77, dir.path()).unwrap();
        let on_disk = read_grid(dir.path().join(model_file_name(2))).unwrap();
        assert_eq!(on_disk, generate_model(&g, sample_seed(77, 2)).unwrap());
    }

    #[test]
    fn zero_samples_rejected_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let err = generate_dataset(&small_geology(), 0, 1, dir.path().join("d")).unwrap_err();
        assert!(err.is_validation());
        assert!(!dir.path().join("d").exists());
    }

    #[test]
    fn shots_resume_and_repair() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_geology(), 3, 5, dir.path()).unwrap();
        let acq = small_acquisition();
        let s = generate_shots(dir.path(), &acq, 0).unwrap();
        assert_eq!(s.generated, vec![0, 1, 2]);
        let first: Vec<Vec<u8>> = (0..3)
            .map(|i| std::fs::read(dir.path().join(shots_file_name(i))).unwrap())
            .collect();

        let again = generate_shots(dir.path(), &acq, 0).unwrap();
        assert!(again.generated.is_empty());
        assert_eq!(again.skipped, vec![0, 1, 2]);

        let victim = dir.path().join(shots_file_name(1));
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        std::fs::write(&victim, bytes).unwrap();
        let repaired = generate_shots(dir.path(), &acq, 0).unwrap();
        assert_eq!(repaired.generated, vec![1]);
        assert_eq!(repaired.skipped, vec![0, 2]);
        for (i, bytes) in first.iter().enumerate() {
            assert_eq!(&std::fs::read(dir.path().join(shots_file_name(i))).unwrap(), bytes);
        }

        let data = load_training_data(dir.path(), (32, 32)).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.inputs[0].shape(), [1, 2, 32, 32]);
    }

    #[test]
    fn cfl_violation_is_refused_up_front() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_geology(), 1, 5, dir.path()).unwrap();
        let acq = AcquisitionConfig {
            dt: Some(0.01),
            ..small_acquisition()
        };
        let err = generate_shots(dir.path(), &acq, 0).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
        assert!(!dir.path().join("shots").exists());
    }

    #[test]
    fn incomplete_dataset_lists_missing_samples() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_geology(), 2, 5, dir.path()).unwrap();
        let err = load_training_data(dir.path(), (32, 32)).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("0, 1"), "{err}");
    }

    #[test]
    fn index_list_truncates() {
        assert_eq!(format_indices(&[1, 2]), "1, 2");
        let many: Vec<usize> = (0..25).collect();
        assert!(format_indices(&many).ends_with("... (25 total)"));
    }
}
