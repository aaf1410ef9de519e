use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmr_cli::commands::{eval_command, export_command, fit_command, write_evaluation, EvalOptions};
use gmr_cli::config::{ConfigError, RunConfig};
use gmr_cli::dataset::{make_views, ViewDataset, ViewSettings, DEFAULT_FOV_DEGREES, DEFAULT_RADIUS, DEFAULT_RESOLUTION, DEFAULT_VIEWS};
use gmr_core::convert::{ConvertOptions, CovariancePath};
use gmr_core::mesh::{load_mesh, Vec3};

#[derive(Parser)]
#[command(name = "gmr", version, about = "Differentiable Gaussian mesh renderer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render ground-truth views of a mesh from a hemisphere of cameras.
    MakeViews {
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VIEWS)]
        n_views: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = DEFAULT_FOV_DEGREES)]
        fov: f64,
        /// Hemisphere pole as x,y,z.
        #[arg(long, default_value = "0,0,1")]
        up: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a mesh to a view dataset.
    Fit {
        config: PathBuf,
        /// Override a config entry, as key=value. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare a predicted mesh with the ground truth on held-out views.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = gmr_cli::config::DEFAULT_HOLDOUT_EVERY)]
        holdout_every: usize,
        #[arg(long, default_value_t = gmr_core::metrics::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a mesh to a Gaussian splat PLY.
    Export {
        mesh: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "embed")]
        path: CovariancePath,
        /// Skip area matching on the embed path.
        #[arg(long)]
        no_rescale: bool,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{s}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(format!("'{s}': expected x,y,z")),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(path)?;
    let cwd = Path::new(".");
    for (i, kv) in overrides.iter().enumerate() {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Invalid {
            line: 0,
            message: format!("override {} ('{kv}') is not key=value", i + 1),
        })?;
        cfg.set(k.trim(), v.trim(), cwd, 0)?;
    }
    cfg.fit.validate().map_err(|e| ConfigError::Invalid { line: 0, message: e.to_string() })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: gmr_core::Error| (1, e.to_string());
    match cli.command {
        Command::MakeViews { mesh, out, n_views, resolution, radius, fov, up, seed } => {
            let settings = ViewSettings {
                n_views,
                resolution,
                radius,
                fov_degrees: fov,
                up: parse_vec3(&up).map_err(|e| (2, e))?,
                seed,
                ..Default::default()
            };
            let ds = make_views(&mesh, &settings, &out).map_err(fail)?;
            println!("wrote {} views to {}", ds.cameras.len(), out.display());
        }
        Command::Fit { config, overrides } => {
            let cfg = load_config(&config, &overrides).map_err(|e| (2, format!("{}: {e}", config.display())))?;
            let every = (cfg.fit.iterations / 20).max(1);
            let result = fit_command(&cfg, &mut |h| {
                if h.iteration % every == 0 {
                    eprintln!("iter {:>6}  loss {:.6e}  lr {:.3e}", h.iteration, h.total, h.lr_position);
                }
            })
            .map_err(fail)?;
            println!(
                "fit complete: {} iterations, final loss {:.6e}, outputs in {}",
                result.history.len(),
                result.history.last().map_or(f64::NAN, |h| h.total),
                cfg.out_dir.display()
            );
        }
        Command::Eval { pred, gt, dataset, out, holdout_every, samples, seed } => {
            let ds = ViewDataset::open(&dataset).map_err(fail)?;
            let opts = EvalOptions { holdout_every, n_samples: samples, seed, ..Default::default() };
            let eval = eval_command(&load_mesh(&pred).map_err(fail)?, &load_mesh(&gt).map_err(fail)?, &ds, &opts).map_err(fail)?;
            print!("{}", eval.summary());
            if let Some(dir) = out {
                let (csv, _) = write_evaluation(&eval, &dir).map_err(fail)?;
                println!("metrics written to {}", csv.display());
            }
        }
        Command::Export { mesh, out, path, no_rescale } => {
            let n = export_command(&mesh, &out, &ConvertOptions { path, rescale: !no_rescale }).map_err(fail)?;
            println!("exported {n} Gaussians to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
