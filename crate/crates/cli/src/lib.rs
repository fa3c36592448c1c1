//! `srdistill` command-line front end. Each subcommand is a plain function
//! taking its parsed arguments, so it can be driven without a subprocess.

pub mod config;
pub mod output;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use srdistill::edl::{run_gradient_suite, softmax_mask};
use srdistill::metrics::{evaluate, report_header};
use srdistill::pipeline::{build_bank_from_manifest, ConfigEcho, ManifestImage, PngLoader};
use srdistill::synth::{planted_corpus, write_png_dataset};
use srdistill::tensor::read_tensor;
use srdistill::{
    degrade_pair, distill, emit_pairs, load_image, save_bank, save_image, DatasetManifest,
    RunConfig,
};

use config::{resolve, Overrides};
use output::{write_atomic, Staged};

pub const RUN_MANIFEST: &str = "run.json";
pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "srdistill", version, about = "Noise-guided SR data distillation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write bicubic HR/LR pairs for every input image.
    Degrade(DegradeArgs),
    /// Build a noise bank from a dataset.
    Bank(BankArgs),
    /// Distill an auxiliary dataset against a target and emit training pairs.
    Distill(DistillArgs),
    /// PSNR/SSIM between matching PNGs of two directories, as JSON lines.
    Metrics(MetricsArgs),
    /// Mask and loss self-checks.
    #[command(subcommand)]
    Edl(EdlCommand),
    /// Write a synthetic target/auxiliary corpus with planted flat patches.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// JSON file whose keys mirror the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct DegradeArgs {
    /// A PNG file, a directory of PNGs, or a dataset manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scale: Option<u32>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone)]
pub struct BankArgs {
    /// A directory of PNGs or a dataset manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub bottom_frac: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone)]
pub struct DistillArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<u32>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub bottom_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Add bank noise to every emitted LR image.
    #[arg(long)]
    pub inject: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone)]
pub struct MetricsArgs {
    #[arg(long)]
    pub ref_dir: PathBuf,
    #[arg(long)]
    pub test_dir: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone)]
pub enum EdlCommand {
    /// Finite-difference check of every loss gradient.
    CheckGrads {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = srdistill::edl::suite::DEFAULT_INSTANCES)]
        instances: usize,
    },
    /// Channel-softmax mask of a tensor file.
    Mask {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Clone)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub targets: usize,
    #[arg(long = "aux", default_value_t = 20)]
    pub aux: usize,
    #[arg(long, default_value_t = 5)]
    pub planted: usize,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, default_value_t = 16)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Degrade(a) => cmd_degrade(&a).map(|_| ()),
        Command::Bank(a) => cmd_bank(&a).map(|_| ()),
        Command::Distill(a) => cmd_distill(&a).map(|_| ()),
        Command::Metrics(a) => cmd_metrics(&a, stdout),
        Command::Edl(c) => cmd_edl(&c, stdout),
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: u32,
    command: &'a str,
    config: ConfigEcho,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
}

fn write_run_record(dir: &Path, command: &str, cfg: &RunConfig, inputs: Vec<String>) -> Result<()> {
    let record = RunRecord {
        version: RUN_FORMAT_VERSION,
        command,
        config: cfg.echo(),
        inputs,
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    let path = dir.join(RUN_MANIFEST);
    fs::write(&path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("{}: cannot list", dir.display()))? {
        let p = entry.with_context(|| format!("{}: cannot list", dir.display()))?.path();
        if p.is_file() && is_png(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A dataset from a manifest file, a directory of PNGs, or a single PNG.
pub fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    let (id, files) = if path.is_dir() {
        let name = path
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into());
        (name, sorted_pngs(path)?)
    } else if is_png(path) {
        (stem(path), vec![path.to_path_buf()])
    } else {
        return Ok(DatasetManifest::load(path)?);
    };
    let images = files
        .into_iter()
        .map(|p| ManifestImage { id: stem(&p), path: p })
        .collect();
    Ok(DatasetManifest::new(id, images)?)
}

fn ensure_nonempty(m: &DatasetManifest, path: &Path) -> Result<()> {
    ensure!(!m.is_empty(), "{}: empty dataset (no images)", path.display());
    Ok(())
}

pub fn cmd_degrade(a: &DegradeArgs) -> Result<PathBuf> {
    let (cfg, _) = resolve(
        a.common.config.as_deref(),
        Overrides {
            scale: a.scale,
            workers: a.common.workers,
            ..Default::default()
        },
    )?;
    let dataset = load_dataset(&a.input)?;
    ensure_nonempty(&dataset, &a.input)?;
    let stage = Staged::new(&a.out)?;
    for sub in ["hr", "lr"] {
        fs::create_dir(stage.path().join(sub))?;
    }
    cfg.run(|| {
        dataset
            .images
            .par_iter()
            .map(|img| -> Result<()> {
                let image = load_image(&img.path)?;
                let (hr, lr) = degrade_pair(&image, cfg.scale)
                    .with_context(|| format!("{}: cannot degrade", img.path.display()))?;
                let name = format!("{}.png", img.id);
                save_image(&hr, stage.path().join("hr").join(&name))?;
                save_image(&lr, stage.path().join("lr").join(&name))?;
                Ok(())
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<()>>()
    })??;
    let ids = dataset.images.iter().map(|i| i.id.clone()).collect();
    write_run_record(stage.path(), "degrade", &cfg, ids)?;
    stage.commit()
}

pub fn cmd_bank(a: &BankArgs) -> Result<PathBuf> {
    let (cfg, _) = resolve(
        a.common.config.as_deref(),
        Overrides {
            patch_size: a.patch_size,
            bottom_frac: a.bottom_frac,
            workers: a.common.workers,
            ..Default::default()
        },
    )?;
    let dataset = load_dataset(&a.dataset)?;
    ensure_nonempty(&dataset, &a.dataset)?;
    let bank = build_bank_from_manifest(&dataset, &cfg, &PngLoader)?;
    let stage = Staged::new(&a.out)?;
    cfg.run(|| save_bank(&bank, stage.path()))??;
    write_run_record(stage.path(), "bank", &cfg, vec![dataset.dataset_id.clone()])?;
    stage.commit()
}

pub fn cmd_distill(a: &DistillArgs) -> Result<PathBuf> {
    let (cfg, file) = resolve(
        a.common.config.as_deref(),
        Overrides {
            scale: a.scale,
            patch_size: a.patch_size,
            bottom_frac: a.bottom_frac,
            seed: a.seed,
            workers: a.common.workers,
        },
    )?;
    let inject = a.inject || file.inject.unwrap_or(false);
    let target = load_dataset(&a.target)?;
    ensure_nonempty(&target, &a.target)?;
    let aux = a.aux.as_deref().map(load_dataset).transpose()?;
    if let Some(aux) = &aux {
        ensure!(
            aux.dataset_id != target.dataset_id,
            "target and auxiliary datasets share the id '{}'",
            aux.dataset_id
        );
    }
    let d = distill(&target, aux.as_ref(), &cfg, &PngLoader)?;
    let stage = Staged::new(&a.out)?;
    cfg.run(|| emit_pairs(&d, stage.path(), inject, cfg.seed))??;
    stage.commit()
}

pub fn cmd_metrics(a: &MetricsArgs, stdout: &mut dyn Write) -> Result<()> {
    let refs = sorted_pngs(&a.ref_dir)?;
    let tests = sorted_pngs(&a.test_dir)?;
    if refs.len() != tests.len() {
        bail!(
            "image count mismatch: {} has {}, {} has {}",
            a.ref_dir.display(),
            refs.len(),
            a.test_dir.display(),
            tests.len()
        );
    }
    let mut lines = vec![report_header().to_string()];
    for (r, t) in refs.iter().zip(&tests) {
        ensure!(
            r.file_name() == t.file_name(),
            "unmatched files: {} vs {}",
            r.display(),
            t.display()
        );
        let report = evaluate(&load_image(r)?, &load_image(t)?)
            .with_context(|| format!("{} vs {}", r.display(), t.display()))?;
        lines.push(report.to_json(&stem(r)).to_string());
    }
    let mut text = lines.join("\n");
    text.push('\n');
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

pub fn cmd_edl(c: &EdlCommand, stdout: &mut dyn Write) -> Result<()> {
    match c {
        EdlCommand::CheckGrads { seed, instances } => {
            let reports = run_gradient_suite(*seed, *instances)?;
            let mut worst = 0.0f64;
            for r in &reports {
                worst = worst.max(r.max_rel_err);
                writeln!(
                    stdout,
                    "{:<20} instances={:<3} max_rel_err={:.3e} {}",
                    r.kind.name(),
                    r.instances,
                    r.max_rel_err,
                    if r.passed() { "ok" } else { "FAIL" }
                )?;
            }
            writeln!(stdout, "max rel err: {worst:.3e}")?;
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.kind.name()).collect();
            ensure!(failed.is_empty(), "gradient check failed for: {}", failed.join(", "));
            Ok(())
        }
        EdlCommand::Mask { input, out } => {
            let t = read_tensor::<f64>(input).with_context(|| format!("{}: cannot use tensor", input.display()))?;
            let m = softmax_mask(&t).with_context(|| format!("{}: cannot build mask", input.display()))?;
            let bytes = m.as_tensor().cast::<f32>().to_bytes()?;
            write_atomic(out, &bytes)
        }
    }
}

/// Writes `target/` and `aux/` PNG datasets plus `planted.json`.
pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf> {
    ensure!(a.targets >= 2, "need at least 2 target images");
    ensure!(a.planted <= a.aux, "cannot plant more images than --aux");
    ensure!(a.side / a.patch_size.max(1) >= 2, "--side must hold at least 2x2 patches");
    let c = planted_corpus(a.targets, a.aux, a.planted, a.side, a.patch_size, a.seed)?;
    let stage = Staged::new(&a.out)?;
    write_png_dataset(&stage.path().join("target"), "target", &c.target)?;
    write_png_dataset(&stage.path().join("aux"), "aux", &c.aux)?;
    let info = json!({
        "version": RUN_FORMAT_VERSION,
        "seed": a.seed,
        "patch_size": c.patch_size,
        "bottom_frac": c.bottom_frac,
        "planted_aux": c.planted_aux,
    });
    let path = stage.path().join("planted.json");
    fs::write(&path, serde_json::to_string_pretty(&info)? + "\n")?;
    stage.commit()
}
