//! Synthetic corpora with planted low-variance patches, for exercising bank
//! construction and distillation end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::Image;

/// High-variance texture: a random checkerboard of cells with values spread over `[0, 1]`.
pub fn textured_image(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = 2;
    let cols = width.div_ceil(cell);
    let rows = height.div_ceil(cell);
    let cells: Vec<f32> = (0..rows * cols * channels)
        .map(|i| {
            let base = if (i / channels + (i / channels) / cols).is_multiple_of(2) { 0.1 } else { 0.9 };
            base + rng.gen_range(-0.08..0.08)
        })
        .collect();
    Image::from_fn(height, width, channels, |y, x, c| {
        cells[((y / cell) * cols + x / cell) * channels + c]
    })
}

/// Overwrites the `s × s` block at `origin` with `level` plus uniform jitter of
/// amplitude `jitter`; returns the modified image.
pub fn plant_flat_patch(
    img: &Image,
    origin: (usize, usize),
    s: usize,
    level: f32,
    jitter: f32,
    seed: u64,
) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = img.shape();
    let mut data = img.data().to_vec();
    for y in origin.0..(origin.0 + s).min(h) {
        for x in origin.1..(origin.1 + s).min(w) {
            for ch in 0..c {
                let v = level + if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
                data[(y * w + x) * c + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(h, w, c, data)
}

/// Target and auxiliary datasets where exactly the `planted_aux` auxiliary
/// images contain a patch inside the target's CATI.
///
/// Two target images carry one flat patch each (different levels and jitter);
/// `bottom_frac` selects exactly those two, so the CATI is their bounding box.
/// Planted auxiliary images receive a verbatim copy of one of them.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub target: Vec<(String, Image)>,
    pub aux: Vec<(String, Image)>,
    pub planted_aux: Vec<String>,
    pub patch_size: usize,
    pub bottom_frac: f64,
}

pub fn planted_corpus(
    n_target: usize,
    n_aux: usize,
    n_planted: usize,
    side: usize,
    patch_size: usize,
    seed: u64,
) -> Result<PlantedCorpus> {
    assert!(n_target >= 2, "need two target images to plant into");
    assert!(n_planted <= n_aux);
    let grid = side / patch_size;
    assert!(grid >= 2, "image must hold at least 2x2 patches");

    let mut target: Vec<(String, Image)> = (0..n_target)
        .map(|i| Ok((format!("t{i:03}"), textured_image(side, side, 3, seed ^ (i as u64 + 1))?)))
        .collect::<Result<_>>()?;
    let plants = [((0, patch_size), 0.45f32, 0.01f32), ((patch_size, 0), 0.55, 0.02)];
    let mut donors = Vec::new();
    for (k, &(origin, level, jitter)) in plants.iter().enumerate() {
        let img = plant_flat_patch(&target[k].1, origin, patch_size, level, jitter, seed.wrapping_add(k as u64))?;
        donors.push(img.crop(origin.0, origin.1, patch_size, patch_size)?);
        target[k].1 = img;
    }

    let step = n_aux.checked_div(n_planted).unwrap_or(0);
    let mut aux = Vec::with_capacity(n_aux);
    let mut planted_aux = Vec::new();
    for i in 0..n_aux {
        let id = format!("a{i:03}");
        let mut img = textured_image(side, side, 3, seed.wrapping_mul(31).wrapping_add(1000 + i as u64))?;
        if n_planted > 0 && i % step == 0 && planted_aux.len() < n_planted {
            let donor = &donors[planted_aux.len() % donors.len()];
            let cell = planted_aux.len() % (grid * grid);
            let (row, col) = ((cell / grid) * patch_size, (cell % grid) * patch_size);
            img = paste(&img, donor, row, col)?;
            planted_aux.push(id.clone());
        }
        aux.push((id, img));
    }
    let total_target_patches = n_target * grid * grid;
    Ok(PlantedCorpus {
        target,
        aux,
        planted_aux,
        patch_size,
        bottom_frac: 2.0 / total_target_patches as f64,
    })
}

fn paste(dst: &Image, src: &Image, row: usize, col: usize) -> Result<Image> {
    let (h, w, c) = dst.shape();
    let mut data = dst.data().to_vec();
    for y in 0..src.height() {
        for x in 0..src.width() {
            for ch in 0..c {
                data[((row + y) * w + col + x) * c + ch] = src.get(y, x, ch);
            }
        }
    }
    Image::new(h, w, c, data)
}

/// Writes each image as `<dir>/<id>.png` and a manifest `<dir>/<dataset_id>.json`
/// with relative paths; returns the manifest path.
pub fn write_png_dataset(
    dir: &std::path::Path,
    dataset_id: &str,
    images: &[(String, Image)],
) -> Result<std::path::PathBuf> {
    use crate::error::Error;
    use crate::pipeline::{DatasetManifest, ManifestImage};

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for (id, img) in images {
        let name = format!("{id}.png");
        crate::image::save_image(img, dir.join(&name))?;
        entries.push(ManifestImage {
            id: id.clone(),
            path: name.into(),
        });
    }
    let manifest = DatasetManifest::new(dataset_id, entries)?;
    let path = dir.join(format!("{dataset_id}.json"));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
