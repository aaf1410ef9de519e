//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use gmr_core::mesh::Vec3;
use gmr_core::optimize::FitConfig;
use thiserror::Error;

pub const DEFAULT_INIT_FACETS: usize = 1280;
pub const DEFAULT_HOLDOUT_EVERY: usize = 11;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// Bit-identical reruns. All reductions already run in a fixed order, so
    /// this is recorded in the manifest and cannot be switched off.
    pub deterministic: bool,
    /// Starting mesh; an icosphere of `init_facets` and `init_radius` if unset.
    pub init_mesh: Option<PathBuf>,
    pub init_facets: usize,
    pub init_radius: f64,
    pub init_offset: Vec3,
    /// Mesh for periodic Chamfer logging; the dataset target if unset.
    pub reference_mesh: Option<PathBuf>,
    pub holdout_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fit: FitConfig::default(),
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            deterministic: true,
            init_mesh: None,
            init_facets: DEFAULT_INIT_FACETS,
            init_radius: 1.0,
            init_offset: Vec3::zeros(),
            reference_mesh: None,
            holdout_every: DEFAULT_HOLDOUT_EVERY,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Invalid {
        line,
        message: format!("invalid value '{value}' for key '{key}'"),
    })
}

impl RunConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut have_dataset = false;
        let mut have_out = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Invalid {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            have_dataset |= key == "dataset";
            have_out |= key == "out_dir";
            cfg.set(key, value, base, line)?;
        }
        if !have_dataset {
            return Err(ConfigError::Missing("dataset"));
        }
        if !have_out {
            return Err(ConfigError::Missing("out_dir"));
        }
        cfg.fit.validate().map_err(|e| ConfigError::Invalid { line: 0, message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies one entry. `line` is only used in diagnostics.
    pub fn set(&mut self, key: &str, value: &str, base: &Path, line: usize) -> Result<(), ConfigError> {
        let path = |v: &str| base.join(v);
        match key {
            "dataset" => self.dataset = path(value),
            "out_dir" => self.out_dir = path(value),
            "deterministic" => {
                self.deterministic = parse(key, value, line)?;
                if !self.deterministic {
                    return Err(ConfigError::Invalid {
                        line,
                        message: "deterministic = false is not supported; runs are always reproducible".into(),
                    });
                }
            }
            "init_mesh" => self.init_mesh = Some(path(value)),
            "init_facets" => self.init_facets = parse(key, value, line)?,
            "init_radius" => self.init_radius = parse(key, value, line)?,
            "init_offset" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(ConfigError::Invalid {
                        line,
                        message: "init_offset expects three comma-separated numbers".into(),
                    });
                }
                self.init_offset = Vec3::new(parse(key, parts[0], line)?, parse(key, parts[1], line)?, parse(key, parts[2], line)?);
            }
            "reference_mesh" => self.reference_mesh = Some(path(value)),
            "holdout_every" => self.holdout_every = parse(key, value, line)?,
            _ => {
                let known = self
                    .fit
                    .set(key, value)
                    .map_err(|e| ConfigError::Invalid { line, message: e.to_string() })?;
                if !known {
                    return Err(ConfigError::UnknownKey { key: key.to_string(), line });
                }
            }
        }
        Ok(())
    }

    /// Serialized form; parsing it back yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("dataset", self.dataset.display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("deterministic", self.deterministic.to_string());
        if let Some(p) = &self.init_mesh {
            put("init_mesh", p.display().to_string());
        }
        put("init_facets", self.init_facets.to_string());
        put("init_radius", self.init_radius.to_string());
        let o = self.init_offset;
        put("init_offset", format!("{},{},{}", o.x, o.y, o.z));
        if let Some(p) = &self.reference_mesh {
            put("reference_mesh", p.display().to_string());
        }
        put("holdout_every", self.holdout_every.to_string());
        for (k, v) in self.fit.entries() {
            put(k, v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_defaults_and_paths() {
        let text = "# toy run\ndataset = data  # relative\nout_dir=/tmp/out\n\niterations = 500\nw_edge = 0.5\ninit_offset = 0.5, 0, 0\n";
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.dataset, PathBuf::from("/cfg/data"));
        assert_eq!(c.out_dir, PathBuf::from("/tmp/out"));
        assert_eq!(c.fit.iterations, 500);
        assert_eq!(c.fit.weights.edge, 0.5);
        assert_eq!(c.fit.batch_size, 1);
        assert_eq!(c.init_offset, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(c.holdout_every, 11);

        let again = RunConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("dataset = d\nout_dir = o\nlearning_rate = 1\n", Path::new(".")).unwrap_err();
        match &err {
            ConfigError::UnknownKey { key, line } => assert_eq!((key.as_str(), *line), ("learning_rate", 3)),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn rejects_bad_values_and_missing_keys() {
        assert!(matches!(RunConfig::parse("out_dir = o\n", Path::new(".")), Err(ConfigError::Missing("dataset"))));
        assert!(matches!(
            RunConfig::parse("dataset = d\nout_dir = o\nbatch_size = two\n", Path::new(".")),
            Err(ConfigError::Invalid { line: 3, .. })
        ));
        assert!(RunConfig::parse("dataset = d\nout_dir = o\nbatch_size = 0\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("dataset = d\nout_dir = o\nno equals sign\n", Path::new(".")).is_err());
    }
}
