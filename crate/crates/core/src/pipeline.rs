//! Noise-guided dataset distillation.
//!
//! The target dataset fixes the CATI and always contributes every image as a
//! training pair. An auxiliary dataset contributes only the images that contain
//! at least one grid patch inside the target's CATI; those patches join the
//! merged noise bank. All per-image work runs on a rayon pool, and every
//! reduction is an ordered merge keyed by manifest order, so outputs do not
//! depend on the worker count.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{
    admit_patches, cati_from_scans, inject_noise, injection_offset, sample_index, save_bank,
    scan_image, BankEntry, ImageScan, NoiseBank, DEFAULT_BOTTOM_FRAC,
};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::patch::DEFAULT_PATCH_SIZE;
use crate::resample::{degrade_pair, ScaleFactor};

pub const PAIRS_FORMAT_VERSION: u32 = 1;
pub const PAIRS_MANIFEST: &str = "pairs.json";
pub const DEFAULT_SCALE: u32 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    pub path: PathBuf,
}

/// `{"dataset_id": ..., "images": [{"id": ..., "path": ...}, ...]}`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub images: Vec<ManifestImage>,
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, images: Vec<ManifestImage>) -> Result<Self> {
        let m = Self {
            dataset_id: dataset_id.into(),
            images,
        };
        m.validate().map_err(Error::InvalidArgument)?;
        Ok(m)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.id.as_str()) {
                return Err(format!(
                    "duplicate image id '{}' in dataset '{}'",
                    img.id, self.dataset_id
                ));
            }
        }
        Ok(())
    }

    /// Reads a manifest; relative image paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        m.validate().map_err(|reason| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for img in &mut m.images {
            if img.path.is_relative() {
                img.path = base.join(&img.path);
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Source of decoded images for manifest entries.
pub trait ImageLoader: Sync {
    fn load(&self, path: &Path) -> Result<Image>;
}

/// Decodes PNG files from disk.
#[derive(Clone, Copy, Debug, Default)]
pub struct PngLoader;

impl ImageLoader for PngLoader {
    fn load(&self, path: &Path) -> Result<Image> {
        load_image(path)
    }
}

/// In-memory images keyed by path.
#[derive(Clone, Debug, Default)]
pub struct MemoryLoader {
    images: HashMap<PathBuf, Image>,
}

impl MemoryLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<PathBuf>, img: Image) {
        self.images.insert(path.into(), img);
    }
}

impl ImageLoader for MemoryLoader {
    fn load(&self, path: &Path) -> Result<Image> {
        self.images.get(path).cloned().ok_or_else(|| {
            Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such in-memory image"),
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: ScaleFactor,
    pub patch_size: usize,
    pub bottom_frac: f64,
    pub seed: u64,
    /// 0 means one worker per available core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale: ScaleFactor::new(DEFAULT_SCALE).expect("nonzero"),
            patch_size: DEFAULT_PATCH_SIZE,
            bottom_frac: DEFAULT_BOTTOM_FRAC,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    /// The part of the configuration that determines output content.
    /// The worker count is excluded: outputs are identical for any pool size.
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            scale: self.scale.get(),
            patch_size: self.patch_size,
            bottom_frac: self.bottom_frac,
            seed: self.seed,
        }
    }

    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub scale: u32,
    pub patch_size: usize,
    pub bottom_frac: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistilledPair {
    pub image_id: String,
    pub origin_dataset: String,
    pub hr: Image,
    pub lr: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistilledDataset {
    pub pairs: Vec<DistilledPair>,
    pub bank: NoiseBank,
    pub config: ConfigEcho,
    pub target_id: String,
    pub aux_id: Option<String>,
}

impl DistilledDataset {
    pub fn aux_pairs(&self) -> impl Iterator<Item = &DistilledPair> {
        self.pairs
            .iter()
            .filter(move |p| Some(&p.origin_dataset) == self.aux_id.as_ref())
    }
}

/// Runs `f` over `items` in parallel and returns results in input order. On
/// failure the error of the earliest failing item is returned.
fn ordered_try_map<I: Sync, O: Send>(
    items: &[I],
    f: impl Fn(&I) -> Result<O> + Sync + Send,
) -> Result<Vec<O>> {
    items.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

struct TargetImage {
    id: String,
    image: Image,
    scan: ImageScan,
    hr: Image,
    lr: Image,
}

fn process_target(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    loader: &dyn ImageLoader,
    degrade: bool,
) -> Result<Vec<TargetImage>> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "dataset '{}' has no images",
            manifest.dataset_id
        )));
    }
    ordered_try_map(&manifest.images, |entry| {
        let image = loader.load(&entry.path)?;
        let scan = scan_image(&entry.id, &image, cfg.patch_size)?;
        let (hr, lr) = if degrade {
            degrade_pair(&image, cfg.scale)?
        } else {
            (image.clone(), image.clone())
        };
        Ok(TargetImage {
            id: entry.id.clone(),
            image,
            scan,
            hr,
            lr,
        })
    })
}

fn target_bank(
    manifest: &DatasetManifest,
    images: &[TargetImage],
    cfg: &RunConfig,
) -> Result<(crate::bank::Cati, Vec<BankEntry>)> {
    let scans: Vec<ImageScan> = images.iter().map(|t| t.scan.clone()).collect();
    let cati = cati_from_scans(&scans, cfg.bottom_frac)?;
    let entries = ordered_try_map(images, |t| {
        admit_patches(&manifest.dataset_id, &t.image, &t.scan, &cati, cfg.patch_size)
    })?;
    Ok((cati, entries.into_iter().flatten().collect()))
}

/// Builds a single dataset's noise bank from a manifest.
pub fn build_bank_from_manifest(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    loader: &dyn ImageLoader,
) -> Result<NoiseBank> {
    if !(cfg.bottom_frac > 0.0 && cfg.bottom_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bottom fraction must be in (0, 1], got {}",
            cfg.bottom_frac
        )));
    }
    cfg.run(|| {
        let images = process_target(manifest, cfg, loader, false)?;
        let (cati, entries) = target_bank(manifest, &images, cfg)?;
        NoiseBank::new(
            cfg.patch_size,
            cfg.bottom_frac,
            cati,
            vec![manifest.dataset_id.clone()],
            entries,
        )
    })?
}

/// Distills `aux` against `target`'s CATI and degrades every selected image.
pub fn distill(
    target: &DatasetManifest,
    aux: Option<&DatasetManifest>,
    cfg: &RunConfig,
    loader: &dyn ImageLoader,
) -> Result<DistilledDataset> {
    if !(cfg.bottom_frac > 0.0 && cfg.bottom_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bottom fraction must be in (0, 1], got {}",
            cfg.bottom_frac
        )));
    }
    cfg.run(|| distill_in_pool(target, aux, cfg, loader))?
}

fn distill_in_pool(
    target: &DatasetManifest,
    aux: Option<&DatasetManifest>,
    cfg: &RunConfig,
    loader: &dyn ImageLoader,
) -> Result<DistilledDataset> {
    let images = process_target(target, cfg, loader, true)?;
    let (cati, mut entries) = target_bank(target, &images, cfg)?;

    let mut pairs: Vec<DistilledPair> = images
        .into_iter()
        .map(|t| DistilledPair {
            image_id: t.id,
            origin_dataset: target.dataset_id.clone(),
            hr: t.hr,
            lr: t.lr,
        })
        .collect();

    let mut datasets = vec![target.dataset_id.clone()];
    if let Some(aux) = aux {
        if !datasets.contains(&aux.dataset_id) {
            datasets.push(aux.dataset_id.clone());
        }
        let selected = ordered_try_map(&aux.images, |entry| {
            let image = loader.load(&entry.path)?;
            let scan = scan_image(&entry.id, &image, cfg.patch_size)?;
            let admitted = admit_patches(&aux.dataset_id, &image, &scan, &cati, cfg.patch_size)?;
            if admitted.is_empty() {
                return Ok(None);
            }
            let (hr, lr) = degrade_pair(&image, cfg.scale)?;
            Ok(Some((
                DistilledPair {
                    image_id: entry.id.clone(),
                    origin_dataset: aux.dataset_id.clone(),
                    hr,
                    lr,
                },
                admitted,
            )))
        })?;
        for (pair, admitted) in selected.into_iter().flatten() {
            pairs.push(pair);
            entries.extend(admitted);
        }
    }

    let bank = NoiseBank::new(cfg.patch_size, cfg.bottom_frac, cati, datasets, entries)?;
    Ok(DistilledDataset {
        pairs,
        bank,
        config: cfg.echo(),
        target_id: target.dataset_id.clone(),
        aux_id: aux.map(|a| a.dataset_id.clone()),
    })
}

/// Per-image seed: the first eight bytes of SHA-256 over the run seed
/// (little-endian) followed by the image id.
pub fn derive_seed(seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Replaces characters that are unsafe in file names.
pub fn file_stem(index: usize, image_id: &str) -> String {
    let clean: String = image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:06}_{clean}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub entry: String,
    pub sub_seed: u64,
    pub offset: [usize; 2],
}

/// One emitted HR/LR pair; paths are relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image_id: String,
    pub origin_dataset: String,
    pub hr_path: String,
    pub lr_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<NoiseRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairsManifest {
    pub version: u32,
    pub config: ConfigEcho,
    pub inject: bool,
    pub target_dataset: String,
    pub auxiliary_dataset: Option<String>,
    pub bank_dir: String,
    pub pairs: Vec<TrainingPair>,
}

/// LR image for one pair: degraded output, or that output with bank noise injected.
pub fn emitted_lr(
    pair: &DistilledPair,
    bank: &NoiseBank,
    inject: bool,
    seed: u64,
) -> Result<(Image, Option<NoiseRecord>)> {
    if !inject {
        return Ok((pair.lr.clone(), None));
    }
    let sub_seed = derive_seed(seed, &pair.image_id);
    let entry = &bank.entries()[sample_index(bank.len(), sub_seed)?];
    let noisy = inject_noise(&pair.lr, &entry.as_patch(), sub_seed)?;
    let offset = injection_offset(sub_seed, entry.pixels.height(), entry.pixels.width());
    Ok((
        noisy,
        Some(NoiseRecord {
            entry: entry.file_name.clone(),
            sub_seed,
            offset: [offset.0, offset.1],
        }),
    ))
}

/// Writes `hr/`, `lr/`, `bank/` and `pairs.json` under `out_dir`; returns the manifest path.
pub fn emit_pairs(
    d: &DistilledDataset,
    out_dir: impl AsRef<Path>,
    inject: bool,
    seed: u64,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    for sub in ["hr", "lr"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let records = d
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let name = format!("{}.png", file_stem(i, &pair.image_id));
            let hr_rel = format!("hr/{name}");
            let lr_rel = format!("lr/{name}");
            save_image(&pair.hr, out_dir.join(&hr_rel))?;
            let (lr, noise) = emitted_lr(pair, &d.bank, inject, seed)?;
            save_image(&lr, out_dir.join(&lr_rel))?;
            Ok(TrainingPair {
                image_id: pair.image_id.clone(),
                origin_dataset: pair.origin_dataset.clone(),
                hr_path: hr_rel,
                lr_path: lr_rel,
                noise,
            })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    save_bank(&d.bank, out_dir.join("bank"))?;

    let manifest = PairsManifest {
        version: PAIRS_FORMAT_VERSION,
        config: ConfigEcho { seed, ..d.config },
        inject,
        target_dataset: d.target_id.clone(),
        auxiliary_dataset: d.aux_id.clone(),
        bank_dir: "bank".into(),
        pairs: records,
    };
    let path = out_dir.join(PAIRS_MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest).expect("pairs manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, "a"), derive_seed(42, "a"));
        assert_ne!(derive_seed(42, "a"), derive_seed(42, "b"));
        assert_ne!(derive_seed(42, "a"), derive_seed(43, "a"));
    }

    #[test]
    fn stems_are_safe() {
        assert_eq!(file_stem(3, "dir/img 1.png"), "000003_dir_img_1.png");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let img = |id: &str| ManifestImage {
            id: id.into(),
            path: PathBuf::from(format!("{id}.png")),
        };
        assert!(DatasetManifest::new("d", vec![img("a"), img("a")]).is_err());
        assert!(DatasetManifest::new("d", vec![img("a"), img("b")]).is_ok());
    }

    #[test]
    fn manifest_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"{"dataset_id":"x","images":[{"id":"a","path":"imgs/a.png"},{"id":"b","path":"/abs/b.png"}]}"#,
        )
        .unwrap();
        let m = DatasetManifest::load(&p).unwrap();
        assert_eq!(m.images[0].path, dir.path().join("imgs/a.png"));
        assert_eq!(m.images[1].path, PathBuf::from("/abs/b.png"));
    }

    #[test]
    fn empty_target_rejected() {
        let m = DatasetManifest::new("t", vec![]).unwrap();
        let err = distill(&m, None, &RunConfig::default(), &MemoryLoader::new()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn missing_image_aborts() {
        let m = DatasetManifest::new(
            "t",
            vec![ManifestImage {
                id: "a".into(),
                path: "nowhere.png".into(),
            }],
        )
        .unwrap();
        assert!(matches!(
            distill(&m, None, &RunConfig::default(), &MemoryLoader::new()),
            Err(Error::Io { .. })
        ));
    }
}
