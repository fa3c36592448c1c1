use std::path::PathBuf;

use srdistill::bank::{BankEntry, Cati};
use srdistill::pipeline::{derive_seed, ManifestImage, MemoryLoader, PairsManifest};
use srdistill::synth::{planted_corpus, PlantedCorpus};
use srdistill::{
    bicubic_resize, distill, emit_pairs, inject_noise, load_image, patch_stats, sample_noise,
    save_image, DatasetManifest, Image, NoiseBank, Patch, PatchStats, RunConfig, ScaleFactor,
};

fn manifests(c: &PlantedCorpus) -> (DatasetManifest, DatasetManifest, MemoryLoader) {
    let mut loader = MemoryLoader::new();
    let mut mk = |id: &str, imgs: &[(String, Image)]| {
        let entries = imgs
            .iter()
            .map(|(name, img)| {
                let path = PathBuf::from(format!("mem/{id}/{name}"));
                loader.insert(path.clone(), img.clone());
                ManifestImage { id: name.clone(), path }
            })
            .collect();
        DatasetManifest::new(id, entries).unwrap()
    };
    let t = mk("target", &c.target);
    let a = mk("aux", &c.aux);
    (t, a, loader)
}

fn config(c: &PlantedCorpus, scale: u32, workers: usize) -> RunConfig {
    RunConfig {
        scale: ScaleFactor::new(scale).unwrap(),
        patch_size: c.patch_size,
        bottom_frac: c.bottom_frac,
        seed: 7,
        workers,
    }
}

struct OracleOutput {
    cati: (f64, f64, f64, f64),
    pairs: Vec<(String, String, Image, Image)>,
    bank: Vec<(String, String, (usize, usize))>,
}

/// Straight-line transcription: stats for every target patch, bottom fraction by
/// full sort, bounding box, admission scan over target, then over auxiliary.
fn brute_force(c: &PlantedCorpus, k: usize) -> OracleOutput {
    let s = c.patch_size;
    let patches = |img: &Image| {
        let mut v = Vec::new();
        let mut r = 0;
        while r + s <= img.height() {
            let mut q = 0;
            while q + s <= img.width() {
                let p = Patch { pixels: img.crop(r, q, s, s).unwrap(), source_id: String::new(), origin: (r, q) };
                v.push(((r, q), patch_stats(&p)));
                q += s;
            }
            r += s;
        }
        v
    };
    let degrade = |img: &Image| {
        let hr = bicubic_resize(img, img.height() / k, img.width() / k).unwrap();
        let lr = bicubic_resize(&hr, hr.height() / k, hr.width() / k).unwrap();
        (hr, lr)
    };

    let mut all: Vec<PatchStats> = Vec::new();
    for (_, img) in &c.target {
        all.extend(patches(img).into_iter().map(|(_, st)| st));
    }
    let take = ((c.bottom_frac * all.len() as f64 - 1e-9).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| {
        all[a].sigma.total_cmp(&all[b].sigma).then(all[a].mean.total_cmp(&all[b].mean)).then(a.cmp(&b))
    });
    let kept: Vec<PatchStats> = order[..take].iter().map(|&i| all[i]).filter(|s| s.mean > 0.0).collect();
    let lo_s = kept.iter().map(|s| s.sigma).fold(f64::INFINITY, f64::min);
    let hi_s = kept.iter().map(|s| s.sigma).fold(f64::NEG_INFINITY, f64::max);
    let lo_m = kept.iter().map(|s| s.mean).fold(f64::INFINITY, f64::min);
    let hi_m = kept.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max);
    let inside = |st: &PatchStats| lo_s <= st.sigma && st.sigma <= hi_s && lo_m <= st.mean && st.mean <= hi_m;

    let mut pairs = Vec::new();
    let mut bank = Vec::new();
    for (id, img) in &c.target {
        let (hr, lr) = degrade(img);
        pairs.push(("target".to_string(), id.clone(), hr, lr));
        for (origin, st) in patches(img) {
            if inside(&st) {
                bank.push(("target".to_string(), id.clone(), origin));
            }
        }
    }
    for (id, img) in &c.aux {
        let mut matched = false;
        for (origin, st) in patches(img) {
            if inside(&st) {
                bank.push(("aux".to_string(), id.clone(), origin));
                matched = true;
            }
        }
        if matched {
            let (hr, lr) = degrade(img);
            pairs.push(("aux".to_string(), id.clone(), hr, lr));
        }
    }
    bank.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    OracleOutput { cati: (lo_s, hi_s, lo_m, hi_m), pairs, bank }
}

fn bank_keys(bank: &NoiseBank) -> Vec<(String, String, (usize, usize))> {
    bank.entries().iter().map(|e| (e.dataset_id.clone(), e.source_id.clone(), e.origin)).collect()
}

#[test]
fn small_instance_matches_brute_force() {
    let corpus = planted_corpus(3, 3, 1, 32, 8, 5).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let d = distill(&t, Some(&a), &config(&corpus, 2, 2), &loader).unwrap();
    let oracle = brute_force(&corpus, 2);

    let (slo, shi) = d.bank.cati().sigma();
    let (mlo, mhi) = d.bank.cati().mean();
    assert_eq!((slo, shi, mlo, mhi), oracle.cati);
    assert_eq!(bank_keys(&d.bank), oracle.bank);
    assert_eq!(d.pairs.len(), oracle.pairs.len());
    for (p, (ds, id, hr, lr)) in d.pairs.iter().zip(&oracle.pairs) {
        assert_eq!((&p.origin_dataset, &p.image_id), (ds, id));
        assert_eq!(&p.hr, hr);
        assert_eq!(&p.lr, lr);
    }
}

#[test]
fn planted_auxiliary_subset_is_recovered() {
    let corpus = planted_corpus(3, 20, 5, 64, 16, 11).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let d = distill(&t, Some(&a), &config(&corpus, 4, 4), &loader).unwrap();
    let aux_ids: Vec<String> = d.aux_pairs().map(|p| p.image_id.clone()).collect();
    assert_eq!(aux_ids, corpus.planted_aux);
    assert_eq!(aux_ids.len(), 5);
    for e in d.bank.entries().iter().filter(|e| e.dataset_id == "aux") {
        assert!(corpus.planted_aux.contains(&e.source_id));
    }
    let oracle = brute_force(&corpus, 4);
    assert_eq!(bank_keys(&d.bank), oracle.bank);
    // Coverage: every target image exactly once, target pairs first.
    let target_ids: Vec<&str> = d.pairs.iter().take(3).map(|p| p.image_id.as_str()).collect();
    assert_eq!(target_ids, vec!["t000", "t001", "t002"]);
    assert_eq!(d.pairs.len(), 3 + 5);
}

#[test]
fn empty_auxiliary_degenerates_to_target() {
    let corpus = planted_corpus(4, 0, 0, 32, 8, 1).unwrap();
    let (t, _, loader) = manifests(&corpus);
    let d = distill(&t, None, &config(&corpus, 2, 1), &loader).unwrap();
    assert_eq!(d.pairs.len(), 4);
    assert!(d.bank.entries().iter().all(|e| e.dataset_id == "target"));
    assert_eq!(d.bank.datasets(), &["target".to_string()]);
}

#[test]
fn widening_bottom_fraction_never_drops_auxiliary_images() {
    let corpus = planted_corpus(3, 12, 4, 32, 8, 3).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let mut previous: Vec<String> = Vec::new();
    for frac in [corpus.bottom_frac, 0.1, 0.2, 0.4, 0.7, 1.0] {
        let cfg = RunConfig { bottom_frac: frac, ..config(&corpus, 2, 2) };
        let d = distill(&t, Some(&a), &cfg, &loader).unwrap();
        let ids: Vec<String> = d.aux_pairs().map(|p| p.image_id.clone()).collect();
        assert!(previous.iter().all(|id| ids.contains(id)), "frac {frac}: {previous:?} ⊄ {ids:?}");
        previous = ids;
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let corpus = planted_corpus(3, 10, 3, 32, 8, 9).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let one = distill(&t, Some(&a), &config(&corpus, 2, 1), &loader).unwrap();
    let many = distill(&t, Some(&a), &config(&corpus, 2, 8), &loader).unwrap();
    assert_eq!(one, many);
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn emission_without_injection_writes_degraded_pairs() {
    let corpus = planted_corpus(2, 4, 2, 32, 8, 2).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let d = distill(&t, Some(&a), &config(&corpus, 2, 2), &loader).unwrap();
    let out = tempfile::tempdir().unwrap();
    let manifest_path = emit_pairs(&d, out.path(), false, 7).unwrap();
    let manifest: PairsManifest = serde_json::from_slice(&std::fs::read(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest.version, 1);
    assert_eq!(manifest.pairs.len(), d.pairs.len());
    assert_eq!(manifest.config.scale, 2);
    let scratch = tempfile::tempdir().unwrap();
    for (rec, pair) in manifest.pairs.iter().zip(&d.pairs) {
        assert!(rec.noise.is_none());
        let direct = scratch.path().join("direct.png");
        save_image(&pair.lr, &direct).unwrap();
        assert_eq!(std::fs::read(out.path().join(&rec.lr_path)).unwrap(), std::fs::read(&direct).unwrap());
        let hr = load_image(out.path().join(&rec.hr_path)).unwrap();
        assert_eq!(hr.height(), 2 * load_image(out.path().join(&rec.lr_path)).unwrap().height());
    }
    assert!(out.path().join("bank/bank.json").exists());

    let again = tempfile::tempdir().unwrap();
    emit_pairs(&d, again.path(), false, 7).unwrap();
    assert_eq!(read_dir_bytes(out.path()), read_dir_bytes(again.path()));
}

#[test]
fn constant_bank_patch_leaves_lr_untouched() {
    let corpus = planted_corpus(2, 0, 0, 32, 8, 4).unwrap();
    let (t, _, loader) = manifests(&corpus);
    let mut d = distill(&t, None, &config(&corpus, 2, 1), &loader).unwrap();
    let flat = Image::filled(8, 8, 3, 0.6).unwrap();
    let entry = BankEntry {
        file_name: String::new(),
        stats: patch_stats(&Patch { pixels: flat.clone(), source_id: "c".into(), origin: (0, 0) }),
        dataset_id: "const".into(),
        source_id: "c".into(),
        origin: (0, 0),
        pixels: flat,
    };
    let cati = Cati::new(0.0, 0.0, entry.stats.mean, entry.stats.mean).unwrap();
    d.bank = NoiseBank::new(8, 0.02, cati, vec!["const".into()], vec![entry]).unwrap();

    let plain = tempfile::tempdir().unwrap();
    let noisy = tempfile::tempdir().unwrap();
    let m1: PairsManifest = serde_json::from_slice(&std::fs::read(emit_pairs(&d, plain.path(), false, 3).unwrap()).unwrap()).unwrap();
    let m2: PairsManifest = serde_json::from_slice(&std::fs::read(emit_pairs(&d, noisy.path(), true, 3).unwrap()).unwrap()).unwrap();
    for (a, b) in m1.pairs.iter().zip(&m2.pairs) {
        assert!(b.noise.is_some());
        assert_eq!(
            std::fs::read(plain.path().join(&a.lr_path)).unwrap(),
            std::fs::read(noisy.path().join(&b.lr_path)).unwrap()
        );
    }
}

#[test]
fn injected_lr_matches_per_image_oracle() {
    let corpus = planted_corpus(3, 6, 2, 64, 8, 12).unwrap();
    let (t, a, loader) = manifests(&corpus);
    let d = distill(&t, Some(&a), &config(&corpus, 2, 3), &loader).unwrap();
    let out = tempfile::tempdir().unwrap();
    let m: PairsManifest = serde_json::from_slice(&std::fs::read(emit_pairs(&d, out.path(), true, 99).unwrap()).unwrap()).unwrap();
    for (rec, pair) in m.pairs.iter().zip(&d.pairs) {
        let sub = derive_seed(99, &pair.image_id);
        let patch = sample_noise(&d.bank, sub).unwrap();
        let expect = inject_noise(&pair.lr, &patch, sub).unwrap().quantized();
        assert_eq!(load_image(out.path().join(&rec.lr_path)).unwrap(), expect);
        assert_eq!(rec.noise.as_ref().unwrap().sub_seed, sub);
    }
}
