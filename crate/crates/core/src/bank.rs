//! Characteristic intervals (CATI), the noise bank, and noise injection.
//!
//! A CATI is the bounding box, in (variance, mean) space, of the lowest-variance
//! fraction of a dataset's grid patches that have positive mean. Any patch whose
//! statistics fall inside it is treated as a pure-noise sample.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_luma, Image};
use crate::patch::{grid_stats, patch_stats, Patch, PatchStats};
use crate::tensor::RawTensor;

pub const DEFAULT_BOTTOM_FRAC: f64 = 0.02;
pub const BANK_FORMAT_VERSION: u32 = 1;
pub const BANK_MANIFEST: &str = "bank.json";
pub const BANK_PATCH_DIR: &str = "patches";

/// Closed intervals `[sigma_lo, sigma_hi] × [mean_lo, mean_hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cati {
    sigma_lo: f64,
    sigma_hi: f64,
    mean_lo: f64,
    mean_hi: f64,
}

impl Cati {
    pub fn new(sigma_lo: f64, sigma_hi: f64, mean_lo: f64, mean_hi: f64) -> Result<Self> {
        let ok = [sigma_lo, sigma_hi, mean_lo, mean_hi].iter().all(|v| v.is_finite())
            && 0.0 <= sigma_lo
            && sigma_lo <= sigma_hi
            && 0.0 < mean_lo
            && mean_lo <= mean_hi
            && mean_hi <= 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid CATI [{sigma_lo}, {sigma_hi}] x [{mean_lo}, {mean_hi}]"
            )));
        }
        Ok(Self {
            sigma_lo,
            sigma_hi,
            mean_lo,
            mean_hi,
        })
    }

    pub fn sigma(&self) -> (f64, f64) {
        (self.sigma_lo, self.sigma_hi)
    }

    pub fn mean(&self) -> (f64, f64) {
        (self.mean_lo, self.mean_hi)
    }

    #[inline]
    pub fn contains(&self, s: &PatchStats) -> bool {
        (self.sigma_lo..=self.sigma_hi).contains(&s.sigma)
            && (self.mean_lo..=self.mean_hi).contains(&s.mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchClass {
    Noise,
    Noiseless,
}

pub fn classify_patch(stats: &PatchStats, cati: &Cati) -> PatchClass {
    if cati.contains(stats) {
        PatchClass::Noise
    } else {
        PatchClass::Noiseless
    }
}

/// `max(1, ⌈frac·total⌉)`. Products within 1e-9 of an integer count as that
/// integer, so 0.02·100 selects 2 rather than 3.
pub fn bottom_count(total: usize, bottom_frac: f64) -> usize {
    let x = bottom_frac * total as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, total.max(1))
}

fn check_bottom_frac(bottom_frac: f64) -> Result<()> {
    if !(bottom_frac > 0.0 && bottom_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bottom fraction must be in (0, 1], got {bottom_frac}"
        )));
    }
    Ok(())
}

/// Indices of the `bottom_count` lowest-variance entries, ordered by
/// (sigma, mean, input index).
pub fn select_bottom(stats: &[PatchStats], bottom_frac: f64) -> Result<Vec<usize>> {
    check_bottom_frac(bottom_frac)?;
    if stats.is_empty() {
        return Err(Error::EmptyDataset("no patches to derive a CATI from".into()));
    }
    let k = bottom_count(stats.len(), bottom_frac);
    let mut order: Vec<usize> = (0..stats.len()).collect();
    let key = |i: &usize, j: &usize| -> Ordering {
        let (a, b) = (&stats[*i], &stats[*j]);
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.mean.total_cmp(&b.mean))
            .then(i.cmp(j))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, key);
        order.truncate(k);
    }
    order.sort_unstable_by(key);
    Ok(order)
}

pub fn compute_cati(stats: &[PatchStats], bottom_frac: f64) -> Result<Cati> {
    let selected = select_bottom(stats, bottom_frac)?;
    let mut survivors = selected.iter().map(|&i| stats[i]).filter(|s| s.mean > 0.0);
    let first = survivors.next().ok_or(Error::EmptyCati)?;
    let init = (first.sigma, first.sigma, first.mean, first.mean);
    let (slo, shi, mlo, mhi) = survivors.fold(init, |(slo, shi, mlo, mhi), s| {
        (slo.min(s.sigma), shi.max(s.sigma), mlo.min(s.mean), mhi.max(s.mean))
    });
    Cati::new(slo, shi, mlo, mhi)
}

/// One admitted noise patch.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    /// Assigned when the bank is assembled; empty until then.
    pub file_name: String,
    pub stats: PatchStats,
    pub dataset_id: String,
    pub source_id: String,
    pub origin: (usize, usize),
    pub pixels: Image,
}

impl BankEntry {
    pub fn as_patch(&self) -> Patch {
        Patch {
            pixels: self.pixels.clone(),
            source_id: self.source_id.clone(),
            origin: self.origin,
        }
    }

    fn order_key(&self, other: &Self) -> Ordering {
        self.source_id
            .cmp(&other.source_id)
            .then(self.origin.cmp(&other.origin))
            .then(self.dataset_id.cmp(&other.dataset_id))
    }
}

/// CATI-admitted patches, sorted by `(source_id, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBank {
    patch_size: usize,
    bottom_frac: f64,
    cati: Cati,
    datasets: Vec<String>,
    entries: Vec<BankEntry>,
}

impl NoiseBank {
    pub fn new(
        patch_size: usize,
        bottom_frac: f64,
        cati: Cati,
        datasets: Vec<String>,
        mut entries: Vec<BankEntry>,
    ) -> Result<Self> {
        for e in &entries {
            if e.pixels.height() != patch_size || e.pixels.width() != patch_size {
                return Err(Error::InvalidArgument(format!(
                    "bank entry {}@{:?} is {}x{}, expected {patch_size}x{patch_size}",
                    e.source_id,
                    e.origin,
                    e.pixels.height(),
                    e.pixels.width()
                )));
            }
            if !cati.contains(&e.stats) {
                return Err(Error::InvalidArgument(format!(
                    "bank entry {}@{:?} lies outside the CATI",
                    e.source_id, e.origin
                )));
            }
        }
        entries.sort_by(BankEntry::order_key);
        for (i, e) in entries.iter_mut().enumerate() {
            e.file_name = format!("{i:06}.ngdc");
        }
        Ok(Self {
            patch_size,
            bottom_frac,
            cati,
            datasets,
            entries,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn bottom_frac(&self) -> f64 {
        self.bottom_frac
    }

    pub fn cati(&self) -> &Cati {
        &self.cati
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of two banks built under the same CATI.
    pub fn merge(self, other: NoiseBank) -> Result<NoiseBank> {
        if self.cati != other.cati || self.patch_size != other.patch_size {
            return Err(Error::InvalidArgument(
                "cannot merge banks with different CATI or patch size".into(),
            ));
        }
        let mut datasets = self.datasets;
        for d in other.datasets {
            if !datasets.contains(&d) {
                datasets.push(d);
            }
        }
        let mut entries = self.entries;
        entries.extend(other.entries);
        NoiseBank::new(self.patch_size, self.bottom_frac, self.cati, datasets, entries)
    }
}

/// Per-image grid statistics, in grid order.
#[derive(Clone, Debug)]
pub struct ImageScan {
    pub image_id: String,
    pub stats: Vec<((usize, usize), PatchStats)>,
}

pub fn scan_image(image_id: &str, img: &Image, s: usize) -> Result<ImageScan> {
    Ok(ImageScan {
        image_id: image_id.to_owned(),
        stats: grid_stats(img, s)?,
    })
}

/// Cuts out every patch of `img` that lies inside `cati`.
pub fn admit_patches(
    dataset_id: &str,
    img: &Image,
    scan: &ImageScan,
    cati: &Cati,
    s: usize,
) -> Result<Vec<BankEntry>> {
    scan.stats
        .iter()
        .filter(|(_, st)| cati.contains(st))
        .map(|&((row, col), stats)| {
            Ok(BankEntry {
                file_name: String::new(),
                stats,
                dataset_id: dataset_id.to_owned(),
                source_id: scan.image_id.clone(),
                origin: (row, col),
                pixels: img.crop(row, col, s, s)?,
            })
        })
        .collect()
}

/// CATI over all grid patches of the given scans, concatenated in order.
pub fn cati_from_scans(scans: &[ImageScan], bottom_frac: f64) -> Result<Cati> {
    let all: Vec<PatchStats> = scans
        .iter()
        .flat_map(|s| s.stats.iter().map(|(_, st)| *st))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyDataset(
            "no image is large enough to hold a single patch".into(),
        ));
    }
    compute_cati(&all, bottom_frac)
}

/// Two-pass bank construction over in-memory images: derive the CATI from every
/// grid patch, then admit every patch inside it. Runs on the current rayon pool.
pub fn build_bank(
    dataset_id: &str,
    images: &[(String, Image)],
    s: usize,
    bottom_frac: f64,
) -> Result<NoiseBank> {
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("dataset '{dataset_id}' has no images")));
    }
    check_bottom_frac(bottom_frac)?;
    let scans = images
        .par_iter()
        .map(|(id, img)| scan_image(id, img, s))
        .collect::<Result<Vec<_>>>()?;
    let cati = cati_from_scans(&scans, bottom_frac)?;
    let entries = images
        .par_iter()
        .zip(&scans)
        .map(|((_, img), scan)| admit_patches(dataset_id, img, scan, &cati, s))
        .collect::<Result<Vec<_>>>()?;
    NoiseBank::new(
        s,
        bottom_frac,
        cati,
        vec![dataset_id.to_owned()],
        entries.into_iter().flatten().collect(),
    )
}

/// Uniform draw over the bank's entries.
pub fn sample_noise(bank: &NoiseBank, seed: u64) -> Result<Patch> {
    sample_index(bank.len(), seed).map(|i| bank.entries[i].as_patch())
}

pub fn sample_index(len: usize, seed: u64) -> Result<usize> {
    if len == 0 {
        return Err(Error::EmptyBank);
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).gen_range(0..len))
}

/// Tile offset used by [`inject_noise`] for a `ph × pw` patch.
pub fn injection_offset(seed: u64, ph: usize, pw: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (rng.gen_range(0..ph), rng.gen_range(0..pw))
}

/// Zero-mean residual of the noise patch, reshaped to `channels` channels.
fn noise_residual(noise: &Image, channels: usize) -> Vec<f64> {
    let src = if noise.channels() == 3 && channels == 1 {
        to_luma(noise)
    } else {
        noise.clone()
    };
    let c = src.channels();
    let n = (src.height() * src.width()) as f64;
    let mut means = vec![0.0f64; c];
    for px in src.data().chunks_exact(c) {
        for (m, &v) in means.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut out = Vec::with_capacity(src.height() * src.width() * channels);
    for px in src.data().chunks_exact(c) {
        for ch in 0..channels {
            let k = if c == 1 { 0 } else { ch };
            out.push(px[k] as f64 - means[k]);
        }
    }
    out
}

/// Adds the patch's zero-mean residual, tiled from a seeded offset, to `lr`.
///
/// The tiled residual is re-centred per channel over the covered area, so the
/// image mean is unchanged unless clamping to `[0, 1]` kicks in.
pub fn inject_noise(lr: &Image, noise: &Patch, seed: u64) -> Result<Image> {
    let (h, w, c) = lr.shape();
    let (ph, pw) = (noise.pixels.height(), noise.pixels.width());
    let residual = noise_residual(&noise.pixels, c);
    let (oy, ox) = injection_offset(seed, ph, pw);

    let mut tiled = Vec::with_capacity(h * w * c);
    let mut sums = vec![0.0f64; c];
    for y in 0..h {
        let ry = (y + oy) % ph;
        for x in 0..w {
            let rx = (x + ox) % pw;
            for ch in 0..c {
                let v = residual[(ry * pw + rx) * c + ch];
                sums[ch] += v;
                tiled.push(v);
            }
        }
    }
    let area = (h * w) as f64;
    let shift: Vec<f64> = sums.iter().map(|s| s / area).collect();
    let data = lr
        .data()
        .iter()
        .zip(&tiled)
        .enumerate()
        .map(|(i, (&v, &r))| (v as f64 + (r - shift[i % c])).clamp(0.0, 1.0) as f32)
        .collect();
    Image::new(h, w, c, data)
}

#[derive(Serialize, Deserialize)]
struct CatiRecord {
    sigma_lo: String,
    sigma_hi: String,
    mean_lo: String,
    mean_hi: String,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    file: String,
    sigma: String,
    mean: String,
    dataset_id: String,
    source_id: String,
    origin: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct BankRecord {
    version: u32,
    patch_size: usize,
    bottom_frac: f64,
    cati: CatiRecord,
    datasets: Vec<String>,
    entries: Vec<EntryRecord>,
}

fn parse_decimal(s: &str, what: &str, path: &Path) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Manifest {
        path: path.to_path_buf(),
        reason: format!("{what}: '{s}' is not a decimal number"),
    })
}

/// Writes `bank.json` and `patches/*.ngdc` under `dir`.
pub fn save_bank(bank: &NoiseBank, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let patch_dir = dir.join(BANK_PATCH_DIR);
    fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;
    bank.entries
        .par_iter()
        .try_for_each(|e| e.pixels.as_tensor().write(patch_dir.join(&e.file_name)))?;

    let (slo, shi) = bank.cati.sigma();
    let (mlo, mhi) = bank.cati.mean();
    let record = BankRecord {
        version: BANK_FORMAT_VERSION,
        patch_size: bank.patch_size,
        bottom_frac: bank.bottom_frac,
        cati: CatiRecord {
            sigma_lo: slo.to_string(),
            sigma_hi: shi.to_string(),
            mean_lo: mlo.to_string(),
            mean_hi: mhi.to_string(),
        },
        datasets: bank.datasets.clone(),
        entries: bank
            .entries
            .iter()
            .map(|e| EntryRecord {
                file: e.file_name.clone(),
                sigma: e.stats.sigma.to_string(),
                mean: e.stats.mean.to_string(),
                dataset_id: e.dataset_id.clone(),
                source_id: e.source_id.clone(),
                origin: [e.origin.0, e.origin.1],
            })
            .collect(),
    };
    let path = dir.join(BANK_MANIFEST);
    let mut json = serde_json::to_string_pretty(&record).expect("bank record serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_bank(dir: impl AsRef<Path>) -> Result<NoiseBank> {
    let dir = dir.as_ref();
    let path = dir.join(BANK_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let record: BankRecord = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if record.version != BANK_FORMAT_VERSION {
        return Err(Error::Manifest {
            path,
            reason: format!("unsupported bank version {}", record.version),
        });
    }
    let c = &record.cati;
    let cati = Cati::new(
        parse_decimal(&c.sigma_lo, "cati.sigma_lo", &path)?,
        parse_decimal(&c.sigma_hi, "cati.sigma_hi", &path)?,
        parse_decimal(&c.mean_lo, "cati.mean_lo", &path)?,
        parse_decimal(&c.mean_hi, "cati.mean_hi", &path)?,
    )?;
    let entries = record
        .entries
        .iter()
        .map(|r| {
            let patch_path = dir.join(BANK_PATCH_DIR).join(&r.file);
            let pixels = Image::from_tensor(RawTensor::read(&patch_path)?.into_tensor()?)?;
            Ok(BankEntry {
                file_name: r.file.clone(),
                stats: PatchStats {
                    sigma: parse_decimal(&r.sigma, "entry sigma", &path)?,
                    mean: parse_decimal(&r.mean, "entry mean", &path)?,
                },
                dataset_id: r.dataset_id.clone(),
                source_id: r.source_id.clone(),
                origin: (r.origin[0], r.origin[1]),
                pixels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseBank::new(record.patch_size, record.bottom_frac, cati, record.datasets, entries)
}

/// Recomputes each entry's statistics from its pixels and checks them against the CATI.
pub fn verify_admission(bank: &NoiseBank) -> bool {
    bank.entries.iter().all(|e| {
        let st = patch_stats(&e.as_patch());
        bank.cati.contains(&st)
    })
}
