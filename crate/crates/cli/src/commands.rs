//! Subcommand bodies, usable without the binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gmr_core::convert::{convert_mesh, export_gaussians, ConvertOptions};
use gmr_core::image::Image;
use gmr_core::mesh::{load_mesh, make_icosphere, save_mesh, shift_initialization, TriangleMesh};
use gmr_core::metrics::{geometric_metrics, psnr, ssim, MetricReport, DEFAULT_SAMPLES};
use gmr_core::optimize::{fit_with_observer, write_history_csv, FitResult, HistoryRecord};
use gmr_core::render::{render_mesh, RenderOptions};
use gmr_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{split_views, ViewDataset};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    status: &'a str,
    version: &'a str,
    seed: u64,
    iterations_completed: usize,
    final_total_loss: Option<f64>,
    error: Option<String>,
    train_views: &'a [usize],
    artifacts: Vec<String>,
    config: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn initial_mesh(cfg: &RunConfig) -> Result<TriangleMesh> {
    let mesh = match &cfg.init_mesh {
        Some(p) => load_mesh(p)?,
        None => make_icosphere(cfg.init_facets, cfg.init_radius),
    };
    Ok(shift_initialization(&mesh, &cfg.init_offset))
}

/// Fits the configured initial mesh to the training views of the dataset and
/// writes the mesh, history, checkpoints and manifest. On failure a manifest
/// labelled `failed` is still written.
pub fn fit_command(cfg: &RunConfig, progress: &mut dyn FnMut(&HistoryRecord)) -> Result<FitResult> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let dataset = ViewDataset::open(&cfg.dataset)?;
    let (train, _) = split_views(dataset.cameras.len(), cfg.holdout_every);
    let manifest_path = cfg.out_dir.join("manifest.json");
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.checkpoint_dir = Some(cfg.out_dir.join("checkpoints"));

    let mut run = || -> Result<FitResult> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("no training views left after the hold-out".into()));
        }
        let views = dataset.load_views(&train)?;
        let init = initial_mesh(cfg)?;
        let reference_path = cfg.reference_mesh.clone().unwrap_or_else(|| dataset.target_path());
        let reference = if fit_cfg.cd_every > 0 { Some(load_mesh(&reference_path)?) } else { None };
        let result = fit_with_observer(&init, &views, &fit_cfg, reference.as_ref(), progress)?;
        save_mesh(&result.mesh, cfg.out_dir.join("mesh.ply"))?;
        write_history_csv(&cfg.out_dir.join("history.csv"), &result.history)?;
        Ok(result)
    };
    let outcome = run();

    let (status, iterations, final_loss, error) = match &outcome {
        Ok(r) => ("complete", r.history.len(), r.history.last().map(|h| h.total), None),
        Err(e) => ("failed", 0, None, Some(e.to_string())),
    };
    let mut artifacts = Vec::new();
    for name in ["mesh.ply", "history.csv", "checkpoints"] {
        if cfg.out_dir.join(name).exists() {
            artifacts.push(name.to_string());
        }
    }
    let manifest = Manifest {
        status,
        version: VERSION,
        seed: cfg.fit.seed,
        iterations_completed: iterations,
        final_total_loss: final_loss,
        error,
        train_views: &train,
        artifacts,
        config: cfg.to_text(),
    };
    write_text(&manifest_path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    outcome
}

/// Per-view image metrics plus the geometric ones.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub views: Vec<usize>,
    pub report: MetricReport,
}

impl Evaluation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim\n");
        for ((v, p), q) in self.views.iter().zip(&self.report.psnr).zip(&self.report.ssim) {
            let _ = writeln!(s, "{v},{p},{q}");
        }
        let _ = writeln!(s, "mean,{},{}", self.report.psnr_mean(), self.report.ssim_mean());
        let _ = writeln!(s, "# cd,{}", self.report.cd);
        let _ = writeln!(s, "# nc,{}", self.report.nc);
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "views evaluated: {}\nchamfer distance (squared): {:.6e}\nnormal consistency: {:.6}\nPSNR mean: {:.3} dB\nSSIM mean: {:.6}\n",
            self.views.len(),
            self.report.cd,
            self.report.nc,
            self.report.psnr_mean(),
            self.report.ssim_mean()
        )
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub holdout_every: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub convert: ConvertOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            holdout_every: crate::config::DEFAULT_HOLDOUT_EVERY,
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            convert: ConvertOptions::default(),
        }
    }
}

/// Evaluates `pred` against `gt` on the dataset's held-out views. When the
/// hold-out selects nothing, every view is used.
pub fn eval_command(pred: &TriangleMesh, gt: &TriangleMesh, dataset: &ViewDataset, opts: &EvalOptions) -> Result<Evaluation> {
    let (_, mut held) = split_views(dataset.cameras.len(), opts.holdout_every);
    if held.is_empty() {
        held = (0..dataset.cameras.len()).collect();
    }
    let targets = dataset.load_views(&held)?;
    let render_opts = RenderOptions {
        background: dataset.meta.background.into(),
        convert: opts.convert,
    };
    let (cd, nc) = geometric_metrics(pred, gt, opts.n_samples, opts.seed)?;
    let scores: Vec<(f64, f64)> = targets
        .par_iter()
        .map(|t| {
            let out = render_mesh(pred, &t.camera, &render_opts)?;
            let rendered = quantize(&out.rgb);
            Ok((psnr(&rendered, &t.rgb)?, ssim(&rendered, &t.rgb)?))
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        views: held,
        report: MetricReport {
            cd,
            nc,
            psnr: scores.iter().map(|s| s.0).collect(),
            ssim: scores.iter().map(|s| s.1).collect(),
        },
    })
}

/// Rounds to the 8-bit levels the dataset images are stored at.
fn quantize(img: &Image) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    out
}

pub fn write_evaluation(eval: &Evaluation, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("metrics.csv");
    let summary = out_dir.join("summary.txt");
    write_text(&csv, &eval.to_csv())?;
    write_text(&summary, &eval.summary())?;
    Ok((csv, summary))
}

/// Converts a mesh to Gaussians and writes them as a splat PLY. Returns the
/// number of records.
pub fn export_command(mesh_path: &Path, out_ply: &Path, convert: &ConvertOptions) -> Result<usize> {
    let mesh = load_mesh(mesh_path)?;
    let gaussians = convert_mesh(&mesh, *convert);
    export_gaussians(&gaussians, out_ply)?;
    Ok(gaussians.len())
}
