use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{save_mesh, TriangleMesh, Vec3};
use crate::metrics::chamfer_distance;
use crate::objective::{total_loss, LossTerms, TargetView};

use super::adam::{OptimState, ScalarAdamState};
use super::config::{FitConfig, ViewSampling};

const STATE_MAGIC: &[u8; 8] = b"GMROPT1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub terms: LossTerms,
    pub total: f64,
    pub lr_position: f64,
    pub lr_color: f64,
    pub wall_time: f64,
    pub cd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mesh: TriangleMesh,
    pub history: Vec<HistoryRecord>,
    pub position_state: OptimState,
    pub color_state: Option<ScalarAdamState>,
}

struct ViewSampler {
    order: Vec<usize>,
    next: usize,
    policy: ViewSampling,
    rng: ChaCha8Rng,
}

impl ViewSampler {
    fn new(n: usize, policy: ViewSampling, seed: u64) -> Self {
        let mut s = ViewSampler {
            order: (0..n).collect(),
            next: n,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if policy == ViewSampling::Sequential {
            s.next = 0;
        }
        s
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.next == self.order.len() {
                    if self.policy == ViewSampling::Shuffle {
                        self.order.shuffle(&mut self.rng);
                    }
                    self.next = 0;
                }
                self.next += 1;
                self.order[self.next - 1]
            })
            .collect()
    }
}

pub fn fit(mesh0: &TriangleMesh, dataset: &[TargetView], config: &FitConfig, reference: Option<&TriangleMesh>) -> Result<FitResult> {
    fit_with_observer(mesh0, dataset, config, reference, &mut |_| {})
}

/// Runs the fitting loop, calling `observer` with each history record.
pub fn fit_with_observer(
    mesh0: &TriangleMesh,
    dataset: &[TargetView],
    config: &FitConfig,
    reference: Option<&TriangleMesh>,
    observer: &mut dyn FnMut(&HistoryRecord),
) -> Result<FitResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset has no views".into()));
    }
    if config.batch_size > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "batch_size {} exceeds the {} available views",
            config.batch_size,
            dataset.len()
        )));
    }
    let options = config.render_options();
    let mut mesh = mesh0.clone();
    let mut pos = OptimState::new(mesh.vertex_count(), config.position_params());
    let mut col = config
        .optimize_colors
        .then(|| ScalarAdamState::new(mesh.vertex_count(), config.color_params()));
    let mut sampler = ViewSampler::new(dataset.len(), config.view_sampling, config.seed);
    let mut history = Vec::with_capacity(config.iterations);
    let start = Instant::now();

    for it in 0..config.iterations {
        let at = |e: Error| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        };
        let batch: Vec<&TargetView> = sampler.batch(config.batch_size).into_iter().map(|i| &dataset[i]).collect();
        let (report, grad_v, grad_c) = total_loss(&mesh, &batch, &config.weights, &options).map_err(at)?;
        if !report.total.is_finite() {
            return Err(at(Error::NonFinite(format!("loss is {}", report.total))));
        }
        let cd = match reference {
            Some(r) if config.cd_every > 0 && it % config.cd_every == 0 => {
                Some(chamfer_distance(&mesh, r, config.cd_samples, config.seed).map_err(at)?)
            }
            _ => None,
        };

        let factor = config.lr_factor(it);
        pos.params.lr = config.lr_position * factor;
        let delta = pos.vectoradam_step(&grad_v).map_err(at)?;
        let vertices: Vec<Vec3> = mesh.vertices().iter().zip(&delta).map(|(v, d)| v + d).collect();
        mesh = mesh.with_vertices(vertices).map_err(at)?;
        if let Some(col) = col.as_mut() {
            col.params.lr = config.lr_color * factor;
            let delta = col.adam_step(&grad_c).map_err(at)?;
            let colors = mesh
                .colors()
                .iter()
                .zip(&delta)
                .map(|(c, d)| (c + d).map(|x| x.clamp(0.0, 1.0)))
                .collect();
            mesh = mesh.with_colors(colors).map_err(at)?;
        }
        if !mesh.is_finite() {
            return Err(at(Error::NonFinite("vertex positions became non-finite".into())));
        }

        let record = HistoryRecord {
            iteration: it,
            terms: report.terms,
            total: report.total,
            lr_position: pos.params.lr,
            lr_color: col.as_ref().map_or(0.0, |c| c.params.lr),
            wall_time: start.elapsed().as_secs_f64(),
            cd,
        };
        observer(&record);
        history.push(record);

        let done = it + 1;
        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                write_checkpoint(dir, done, &mesh, &pos, col.as_ref(), config).map_err(at)?;
            }
        }
    }

    Ok(FitResult {
        mesh,
        history,
        position_state: pos,
        color_state: col,
    })
}

/// Paths of the mesh, optimizer state and config snapshot for a checkpoint.
pub fn checkpoint_paths(dir: &Path, iteration: usize) -> [PathBuf; 3] {
    let stem = format!("checkpoint_{iteration:06}");
    ["ply", "optim", "cfg"].map(|ext| dir.join(format!("{stem}.{ext}")))
}

pub fn write_checkpoint(
    dir: &Path,
    iteration: usize,
    mesh: &TriangleMesh,
    pos: &OptimState,
    col: Option<&ScalarAdamState>,
    config: &FitConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [mesh_path, state_path, cfg_path] = checkpoint_paths(dir, iteration);
    save_mesh(mesh, &mesh_path)?;
    save_optimizer_state(&state_path, pos, col)?;
    std::fs::write(&cfg_path, config.to_text()).map_err(|e| Error::io(&cfg_path, e))
}

pub fn save_optimizer_state(path: &Path, pos: &OptimState, col: Option<&ScalarAdamState>) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(STATE_MAGIC)?;
        w.write_all(&[col.is_some() as u8])?;
        pos.write_to(&mut w)?;
        if let Some(c) = col {
            c.write_to(&mut w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_optimizer_state(path: &Path) -> Result<(OptimState, Option<ScalarAdamState>)> {
    let read = || -> std::io::Result<(OptimState, Option<ScalarAdamState>)> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic[..8] != STATE_MAGIC {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "not an optimizer state file"));
        }
        let pos = OptimState::read_from(&mut r)?;
        let col = if magic[8] == 1 { Some(ScalarAdamState::read_from(&mut r)?) } else { None };
        Ok((pos, col))
    };
    read().map_err(|e| Error::io(path, e))
}

pub fn write_history_csv(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,color,silhouette,edge,laplacian,total,lr_position,lr_color,wall_time,cd")?;
        for r in history {
            let cd = r.cd.map(|c| c.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{:.6},{}",
                r.iteration, r.terms.color, r.terms.silhouette, r.terms.edge, r.terms.laplacian, r.total, r.lr_position, r.lr_color, r.wall_time, cd
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
