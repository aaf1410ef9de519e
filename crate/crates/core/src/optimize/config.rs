use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::convert::{ConvertOptions, CovariancePath};
use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::objective::LossWeights;
use crate::render::RenderOptions;

use super::adam::AdamParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `lr_final_fraction` of it.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSampling {
    /// Seeded shuffle, cycling through every view before any repeats.
    Shuffle,
    /// Views in dataset order, wrapping around.
    Sequential,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(LrSchedule { Constant => "constant", Cosine => "cosine" });
keyword_enum!(ViewSampling { Shuffle => "shuffle", Sequential => "sequential" });

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_position: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_schedule: LrSchedule,
    pub lr_final_fraction: f64,
    pub weights: LossWeights,
    pub convert: ConvertOptions,
    pub background: Vec3,
    pub optimize_colors: bool,
    pub seed: u64,
    pub view_sampling: ViewSampling,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Record Chamfer distance to the reference mesh every this many
    /// iterations; 0 disables.
    pub cd_every: usize,
    pub cd_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            batch_size: 1,
            lr_position: 1e-3,
            lr_color: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_schedule: LrSchedule::Cosine,
            lr_final_fraction: 0.1,
            weights: LossWeights::default(),
            convert: ConvertOptions::default(),
            background: Vec3::zeros(),
            optimize_colors: true,
            seed: 0,
            view_sampling: ViewSampling::Shuffle,
            checkpoint_every: 0,
            checkpoint_dir: None,
            cd_every: 0,
            cd_samples: 10_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_vec3(key: &str, value: &str) -> Result<Vec3> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("key '{key}' expects three comma-separated numbers")));
    }
    Ok(Vec3::new(parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?))
}

impl FitConfig {
    pub fn position_params(&self) -> AdamParams {
        AdamParams {
            lr: self.lr_position,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn color_params(&self) -> AdamParams {
        AdamParams {
            lr: self.lr_color,
            ..self.position_params()
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.background,
            convert: self.convert,
        }
    }

    /// Learning-rate multiplier at a zero-based iteration.
    pub fn lr_factor(&self, iteration: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = if self.iterations > 1 {
                    iteration.min(self.iterations - 1) as f64 / (self.iterations - 1) as f64
                } else {
                    0.0
                };
                let floor = self.lr_final_fraction;
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.convert.path != CovariancePath::Embed {
            return Err(Error::InvalidArgument("fitting requires covariance_path = embed".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::InvalidArgument("lr_final_fraction must lie in [0, 1]".into()));
        }
        if self.cd_every > 0 && self.cd_samples == 0 {
            return Err(Error::InvalidArgument("cd_samples must be positive".into()));
        }
        if !self.background.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("background must be finite".into()));
        }
        self.position_params().validate()?;
        self.color_params().validate()?;
        self.weights.validate()
    }

    /// Sets one `key = value` entry. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_position" => self.lr_position = parse(key, value)?,
            "lr_color" => self.lr_color = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "lr_final_fraction" => self.lr_final_fraction = parse(key, value)?,
            "w_color" => self.weights.color = parse(key, value)?,
            "w_silhouette" => self.weights.silhouette = parse(key, value)?,
            "w_edge" => self.weights.edge = parse(key, value)?,
            "w_laplacian" => self.weights.laplacian = parse(key, value)?,
            "covariance_path" => self.convert.path = value.parse().map_err(Error::InvalidArgument)?,
            "rescale" => self.convert.rescale = parse(key, value)?,
            "background" => self.background = parse_vec3(key, value)?,
            "optimize_colors" => self.optimize_colors = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "view_sampling" => self.view_sampling = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "cd_every" => self.cd_every = parse(key, value)?,
            "cd_samples" => self.cd_samples = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// All settable keys with their current values, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = self.background;
        vec![
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_position", self.lr_position.to_string()),
            ("lr_color", self.lr_color.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("lr_schedule", self.lr_schedule.to_string()),
            ("lr_final_fraction", self.lr_final_fraction.to_string()),
            ("w_color", self.weights.color.to_string()),
            ("w_silhouette", self.weights.silhouette.to_string()),
            ("w_edge", self.weights.edge.to_string()),
            ("w_laplacian", self.weights.laplacian.to_string()),
            ("covariance_path", self.convert.path.to_string()),
            ("rescale", self.convert.rescale.to_string()),
            ("background", format!("{},{},{}", b.x, b.y, b.z)),
            ("optimize_colors", self.optimize_colors.to_string()),
            ("seed", self.seed.to_string()),
            ("view_sampling", self.view_sampling.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("cd_every", self.cd_every.to_string()),
            ("cd_samples", self.cd_samples.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut c = FitConfig {
            iterations: 17,
            lr_position: 3.3e-3,
            background: Vec3::new(0.25, 1.0, 0.0),
            lr_schedule: LrSchedule::Constant,
            view_sampling: ViewSampling::Sequential,
            ..Default::default()
        };
        c.weights.edge = 0.123456789;
        let mut d = FitConfig::default();
        for (k, v) in c.entries() {
            assert!(d.set(k, &v).unwrap(), "{k}");
        }
        assert_eq!(c, d);
        assert!(!d.set("nope", "1").unwrap());
        assert!(d.set("iterations", "x").is_err());
        assert!(d.set("background", "1,2").is_err());
    }

    #[test]
    fn cosine_schedule() {
        let c = FitConfig { iterations: 101, ..Default::default() };
        assert_eq!(c.lr_factor(0), 1.0);
        assert!((c.lr_factor(100) - 0.1).abs() < 1e-15);
        assert!((c.lr_factor(50) - 0.55).abs() < 1e-12);
        assert!((1..101).all(|i| c.lr_factor(i) <= c.lr_factor(i - 1)));
    }

    #[test]
    fn validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let mut c = FitConfig::default();
        c.convert.path = CovariancePath::Eigen;
        assert!(c.validate().is_err());
        assert!(FitConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }
}
