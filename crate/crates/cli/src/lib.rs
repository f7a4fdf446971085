//! Command implementations behind the `bokeh` binary.
//!
//! Every command writes its outputs under temporary names first and renames
//! them into place only once all of them were written, so a failing command
//! leaves no partial files behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bokeh_core::baseline::{center_prior, saliency_bokeh_with};
use bokeh_core::bench::bench_render;
use bokeh_core::metrics::{MetricEntry, MetricReport};
use bokeh_core::pipeline::{render, RenderOptions, WeightSource};
use bokeh_core::synthetic::write_dataset;
use bokeh_core::train::{load_checkpoint, parse_list, parse_size, save_checkpoint, train_phases, TrainConfig};
use bokeh_core::{load_depth, load_image, save_image, FocusParams};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

#[derive(Debug, Parser)]
#[command(name = "bokeh", version, about = "Depth-guided synthetic bokeh rendering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a bokeh image from an image and a depth map.
    Render(RenderArgs),
    /// Train a weight head on a synthetic dataset.
    Train(TrainArgs),
    /// Score predictions against ground truth (PSNR, SSIM).
    Eval(EvalArgs),
    /// Time the render path on an in-memory scene.
    Bench(BenchArgs),
    /// Write a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Keep the salient region sharp and blur the rest with one kernel.
    Baseline(BaselineArgs),
}

fn size_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_size(s)
}

/// Comma-separated kernel sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelList(pub Vec<usize>);

fn list_arg(s: &str) -> std::result::Result<KernelList, String> {
    parse_list(s).map(KernelList)
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Depth map, 0 = near. Needed by both weight sources.
    #[arg(long)]
    pub depth: PathBuf,
    /// Trained weight head; without it the parametric focus model is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = list_arg, default_value = "25,45,75")]
    pub kernels: KernelList,
    #[arg(long, default_value_t = 0.0)]
    pub focus: f32,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f32,
    /// One-hot weights instead of the softmax.
    #[arg(long)]
    pub hard: bool,
    #[arg(long, value_parser = size_arg, default_value = "1024x768")]
    pub proc_size: (usize, usize),
    /// Also write one grayscale PNG per weight level into this directory.
    #[arg(long)]
    pub dump_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with input/, depth/ and target/.
    #[arg(long)]
    pub data: PathBuf,
    /// Phase config file; the built-in desk schedule when omitted.
    #[arg(long)]
    pub phases: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// CSV destination; printed to stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = size_arg, default_value = "1024x1536")]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_parser = list_arg, default_value = "25,45,75")]
    pub kernels: KernelList,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = size_arg, default_value = "64x64")]
    pub size: (usize, usize),
    #[arg(long, value_parser = list_arg, default_value = "25,45,75")]
    pub kernels: KernelList,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Grayscale saliency map, 1 = sharp; a centered ellipse when omitted.
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    #[arg(long, default_value_t = bokeh_core::baseline::BASELINE_KERNEL)]
    pub kernel: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render(a) => cmd_render(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Baseline(a) => cmd_baseline(&a),
    }
}

/// Output files staged under temporary names. Dropping without
/// [`Staged::commit`] deletes them, plus any directories it created.
#[derive(Default)]
struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
    dirs: Vec<PathBuf>,
    committed: Vec<PathBuf>,
    done: bool,
}

impl Staged {
    fn create_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    /// Writes `final_path` through `write`, which receives the temporary path.
    fn write(&mut self, final_path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let name = final_path
            .file_name()
            .with_context(|| format!("{} is not a file path", final_path.display()))?
            .to_string_lossy();
        let tmp_name = match final_path.extension() {
            Some(ext) => format!(".{name}.partial-{}.{}", std::process::id(), ext.to_string_lossy()),
            None => format!(".{name}.partial-{}", std::process::id()),
        };
        let tmp = final_path.with_file_name(tmp_name);
        self.files.push((tmp.clone(), final_path.to_path_buf()));
        write(&tmp).with_context(|| format!("cannot write {}", final_path.display()))
    }

    fn commit(mut self) -> Result<()> {
        for i in 0..self.files.len() {
            let (tmp, dst) = &self.files[i];
            fs::rename(tmp, dst).with_context(|| format!("cannot write {}", dst.display()))?;
            self.committed.push(dst.clone());
        }
        self.done = true;
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
        for path in &self.committed {
            let _ = fs::remove_file(path);
        }
        for dir in self.dirs.iter().rev() {
            let _ = fs::remove_dir(dir);
        }
    }
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let img = load_image(&args.input).with_context(|| format!("cannot read input {}", args.input.display()))?;
    if img.channels() != 3 {
        bail!("input {} must be an RGB image", args.input.display());
    }
    let depth = load_depth(&args.depth).with_context(|| format!("cannot read depth {}", args.depth.display()))?;
    let weights = match &args.model {
        Some(path) => {
            let (head, _) = load_checkpoint(path).with_context(|| format!("cannot read model {}", path.display()))?;
            WeightSource::Learned(head)
        }
        None => {
            let mut params = FocusParams::evenly_spaced(args.focus, args.kernels.0.len() + 1)?;
            params.tau = args.tau;
            params.validate()?;
            WeightSource::Parametric {
                params,
                hard: args.hard,
            }
        }
    };
    let opts = RenderOptions {
        kernels: args.kernels.0.clone(),
        weights,
        proc_size: Some(args.proc_size),
    };
    let out = render(&img, &depth, &opts)?;

    let mut staged = Staged::default();
    if let Some(parent) = args.out.parent() {
        staged.create_dir(parent)?;
    }
    staged.write(&args.out, |p| Ok(save_image(&out.image, p)?))?;
    if let Some(dir) = &args.dump_weights {
        staged.create_dir(dir)?;
        for (level, plane) in out.weights.to_images().iter().enumerate() {
            staged.write(&dir.join(format!("weight_{level}.png")), |p| Ok(save_image(plane, p)?))?;
        }
    }
    staged.commit()
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = match &args.phases {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("bad phase config {}", path.display()))?
        }
        None => TrainConfig::desk(),
    };
    let dataset = bokeh_core::synthetic::load_dataset(&args.data)
        .with_context(|| format!("cannot load dataset {}", args.data.display()))?;
    let samples: Vec<_> = dataset.into_iter().map(|(_, s)| s).collect();
    let outcome = train_phases(&samples, &config, args.seed)?;
    for r in &outcome.phases {
        println!(
            "phase {} loss={} iterations={} final_loss={:.6} final_l1={:.6}",
            r.phase,
            r.loss.name(),
            r.iterations,
            r.final_loss,
            r.final_l1
        );
    }
    let mut staged = Staged::default();
    if let Some(parent) = args.out.parent() {
        staged.create_dir(parent)?;
    }
    staged.write(&args.out, |p| Ok(save_checkpoint(&outcome.head, &outcome.adam, p)?))?;
    staged.commit()
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.with_context(|| format!("cannot list {}", dir.display()))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image && path.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// Pairs files by name and scores each pair.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<MetricReport> {
    let pred_names = image_names(pred)?;
    let gt_names = image_names(gt)?;
    if let Some(name) = pred_names.difference(&gt_names).next() {
        bail!(
            "{} has no counterpart {}",
            pred.join(name).display(),
            gt.join(name).display()
        );
    }
    if let Some(name) = gt_names.difference(&pred_names).next() {
        bail!(
            "{} has no counterpart {}",
            gt.join(name).display(),
            pred.join(name).display()
        );
    }
    if pred_names.is_empty() {
        bail!("no images in {}", pred.display());
    }
    let names: Vec<String> = pred_names.into_iter().collect();
    let entries = names
        .par_iter()
        .map(|name| -> Result<MetricEntry> {
            let p = load_image(pred.join(name))?;
            let g = load_image(gt.join(name))?;
            MetricReport::evaluate(name.clone(), &p, &g).with_context(|| format!("cannot score {name}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { entries })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let report = evaluate_dirs(&args.pred, &args.gt)?;
    let csv = report.to_csv();
    match &args.csv {
        Some(path) => {
            let mut staged = Staged::default();
            if let Some(parent) = path.parent() {
                staged.create_dir(parent)?;
            }
            staged.write(path, |p| Ok(fs::write(p, &csv)?))?;
            staged.commit()?;
            println!(
                "{} pairs: mean psnr={:.4} dB, mean ssim={:.6}",
                report.entries.len(),
                report.mean_psnr(),
                report.mean_ssim()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (w, h) = args.size;
    let report = bench_render(w, h, args.iters, args.threads, &args.kernels.0)?;
    println!(
        "render {w}x{h} kernels={:?} threads={} iters={} median={:.3} ms",
        args.kernels.0,
        args.threads,
        args.iters,
        report.median().as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (w, h) = args.size;
    let existed = args.out.exists();
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let result = write_dataset(&args.out, args.count, args.seed, w, h, &args.kernels.0);
    if result.is_err() && !existed {
        let _ = fs::remove_dir(&args.out);
    }
    result.with_context(|| format!("cannot write dataset to {}", args.out.display()))?;
    println!("wrote {} scenes ({w}x{h}) to {}", args.count, args.out.display());
    Ok(())
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let img = load_image(&args.input).with_context(|| format!("cannot read input {}", args.input.display()))?;
    let saliency = match &args.saliency {
        Some(path) => load_image(path).with_context(|| format!("cannot read saliency {}", path.display()))?,
        None => center_prior(img.width(), img.height()),
    };
    let out = saliency_bokeh_with(&img, &saliency, args.kernel)?;
    let mut staged = Staged::default();
    if let Some(parent) = args.out.parent() {
        staged.create_dir(parent)?;
    }
    staged.write(&args.out, |p| Ok(save_image(&out, p)?))?;
    staged.commit()
}
