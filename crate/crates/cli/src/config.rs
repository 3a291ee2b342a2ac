//! Run settings: command-line flags layered over an optional flat
//! `key = value` file, layered over built-in defaults.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use scm_core::adb::{DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_ITERATIONS, DEFAULT_LAMBDA, DEFAULT_LAYERS};
use scm_core::metrics::default_gamma_grid;
use scm_core::{DiffusionParams, FilterInput, LaplacianSign};

use crate::error::{CliError, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_GRID: (usize, usize) = (14, 14);
pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (224, 224);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Gtk,
    Loc,
    V1,
    V2,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

/// Flags shared by every subcommand. Each has a config-file key of the same
/// name (dashes or underscores).
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of diffusion blocks.
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    /// One value for every block, or a comma-separated list per block.
    #[arg(long, global = true)]
    pub lambda: Option<String>,
    #[arg(long, global = true)]
    pub beta: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Newton-Schulz iterations.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Binarization threshold for predicted boxes.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Comma-separated thresholds for the MaxBoxAcc sweeps.
    #[arg(long, global = true)]
    pub gamma_grid: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<Metric>,
    /// Laplacian sign convention: `main` or `appendix`.
    #[arg(long, global = true)]
    pub sign: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub residual_f: Option<bool>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub residual_s: Option<bool>,
    /// Map fed to the filter: `diffused` or `input`.
    #[arg(long, global = true)]
    pub filter_input: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub tensor_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pred_dir: Option<PathBuf>,
    /// Read F0/S0 from calibrate output instead of the raw tensors.
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,
    /// Patch grid `HxW`; inferred from square attention when absent.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Image size `HxW` or `N`, used when no annotation gives it.
    #[arg(long, global = true)]
    pub image_size: Option<String>,
    /// Write a PGM heatmap per image.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub heatmap: Option<bool>,
    /// Print GT-Known for every gamma of the grid.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub sweep: Option<bool>,
}

/// Parsed settings file.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    path: PathBuf,
    entries: HashMap<String, (usize, String)>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(err(format!("unknown key `{key}`")));
            }
            entries.insert(key, (idx + 1, value.trim().to_string()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let Some((line, raw)) = self.entries.get(key) else {
            return Ok(None);
        };
        raw.parse().map(Some).map_err(|e: T::Err| CliError::Config {
            path: self.path.clone(),
            line: *line,
            message: format!("`{key}`: {e}"),
        })
    }
}

const KNOWN_KEYS: &[&str] = &[
    "layers",
    "lambda",
    "beta",
    "alpha",
    "iters",
    "gamma",
    "gamma-grid",
    "metric",
    "sign",
    "residual-f",
    "residual-s",
    "filter-input",
    "seed",
    "jobs",
    "tensor-dir",
    "annotations",
    "out-dir",
    "pred-dir",
    "trace-dir",
    "grid",
    "image-size",
    "heatmap",
    "sweep",
];

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub params: DiffusionParams,
    pub gamma: f64,
    pub gamma_grid: Vec<f64>,
    pub metric: Option<Metric>,
    pub seed: u64,
    pub jobs: usize,
    pub tensor_dir: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub pred_dir: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    pub grid: Option<(usize, usize)>,
    pub image_size: (usize, usize),
    pub heatmap: bool,
    pub sweep: bool,
}

impl Settings {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let pick = |flag: Option<String>, key: &str| -> Result<Option<String>> {
            Ok(flag.or(file.get::<String>(key)?))
        };

        let lambda = parse_list("lambda", pick(args.lambda.clone(), "lambda")?.as_deref())?;
        let beta = parse_list("beta", pick(args.beta.clone(), "beta")?.as_deref())?;
        let layers = match args.layers.or(file.get("layers")?) {
            Some(l) => l,
            None => [&lambda, &beta]
                .iter()
                .filter_map(|v| v.as_ref().filter(|v| v.len() > 1).map(Vec::len))
                .next()
                .unwrap_or(DEFAULT_LAYERS),
        };
        let mut params = DiffusionParams::uniform(layers, DEFAULT_LAMBDA, DEFAULT_BETA);
        params.lambda = broadcast("lambda", lambda, layers, DEFAULT_LAMBDA)?;
        params.beta = broadcast("beta", beta, layers, DEFAULT_BETA)?;
        params.alpha = args.alpha.or(file.get("alpha")?).unwrap_or(DEFAULT_ALPHA);
        params.iterations = args.iters.or(file.get("iters")?).unwrap_or(DEFAULT_ITERATIONS);
        params.residual_f = args.residual_f.or(file.get("residual-f")?).unwrap_or(true);
        params.residual_s = args.residual_s.or(file.get("residual-s")?).unwrap_or(true);
        if let Some(s) = pick(args.sign.clone(), "sign")? {
            params.laplacian_sign = s.parse::<LaplacianSign>()?;
        }
        if let Some(s) = pick(args.filter_input.clone(), "filter-input")? {
            params.filter_input = s.parse::<FilterInput>()?;
        }
        params.validate()?;

        let gamma = args.gamma.or(file.get("gamma")?).unwrap_or(DEFAULT_GAMMA);
        if !(0.0..1.0).contains(&gamma) {
            return Err(CliError::value("gamma", format!("{gamma} outside [0, 1)")));
        }
        let gamma_grid = parse_list("gamma-grid", pick(args.gamma_grid.clone(), "gamma-grid")?.as_deref())?
            .unwrap_or_else(default_gamma_grid);
        if gamma_grid.is_empty() || gamma_grid.iter().any(|g| !(0.0..1.0).contains(g)) {
            return Err(CliError::value("gamma-grid", "thresholds must lie in [0, 1)"));
        }

        let grid = pick(args.grid.clone(), "grid")?
            .map(|s| parse_dims("grid", &s))
            .transpose()?;
        let image_size = pick(args.image_size.clone(), "image-size")?
            .map(|s| parse_dims("image-size", &s))
            .transpose()?
            .unwrap_or(DEFAULT_IMAGE_SIZE);

        Ok(Self {
            params,
            gamma,
            gamma_grid,
            metric: args.metric.or(file.get("metric")?),
            seed: args.seed.or(file.get("seed")?).unwrap_or(0),
            jobs: args.jobs.or(file.get("jobs")?).unwrap_or(0),
            tensor_dir: args.tensor_dir.clone().or(file.get("tensor-dir")?),
            annotations: args.annotations.clone().or(file.get("annotations")?),
            out_dir: args.out_dir.clone().or(file.get("out-dir")?),
            pred_dir: args.pred_dir.clone().or(file.get("pred-dir")?),
            trace_dir: args.trace_dir.clone().or(file.get("trace-dir")?),
            grid,
            image_size,
            heatmap: args.heatmap.or(file.get("heatmap")?).unwrap_or(false),
            sweep: args.sweep.or(file.get("sweep")?).unwrap_or(false),
        })
    }

    pub fn require_tensor_dir(&self) -> Result<&Path> {
        self.tensor_dir
            .as_deref()
            .ok_or_else(|| CliError::Input("--tensor-dir is required".into()))
    }

    pub fn out_dir_or(&self, fallback: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
    }
}

fn parse_list(key: &str, raw: Option<&str>) -> Result<Option<Vec<f64>>> {
    raw.map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| CliError::value(key, format!("`{t}`: {e}"))))
            .collect()
    })
    .transpose()
}

fn broadcast(key: &str, values: Option<Vec<f64>>, layers: usize, default: f64) -> Result<Vec<f64>> {
    match values {
        None => Ok(vec![default; layers]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; layers]),
        Some(v) if v.len() == layers => Ok(v),
        Some(v) => Err(CliError::value(
            key,
            format!("{} values given for {layers} layers", v.len()),
        )),
    }
}

/// `HxW` or a single `N` meaning `NxN`.
pub fn parse_dims(key: &str, s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| CliError::value(key, format!("`{s}` is not HxW with positive sizes")))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = Settings::resolve(&RunArgs::default()).unwrap();
        assert_eq!(s.params, DiffusionParams::default());
        assert_eq!(s.gamma, 0.5);
        assert_eq!(s.gamma_grid.len(), 20);
        assert_eq!(s.image_size, (224, 224));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nalpha = 0.01\nbeta=0.3\nresidual_s = false\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            alpha: Some(0.005),
            ..RunArgs::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.params.alpha, 0.005);
        assert_eq!(s.params.beta, vec![0.3; 4]);
        assert!(!s.params.residual_s);
        assert!(s.params.residual_f);
    }

    #[test]
    fn per_layer_lists_set_the_depth() {
        let args = RunArgs {
            lambda: Some("1.0, 0.9".into()),
            ..RunArgs::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.params.lambda, vec![1.0, 0.9]);
        assert_eq!(s.params.beta, vec![0.5, 0.5]);

        let bad = RunArgs {
            layers: Some(3),
            lambda: Some("1,2".into()),
            ..RunArgs::default()
        };
        assert!(matches!(Settings::resolve(&bad), Err(CliError::Value { .. })));
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let p = Path::new("x.cfg");
        match FileConfig::parse(p, "alpha = 1\nnonsense\n") {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(FileConfig::parse(p, "colour = red").is_err());
        let f = FileConfig::parse(p, "layers = two").unwrap();
        assert!(f.get::<usize>("layers").is_err());
    }

    #[test]
    fn dims() {
        assert_eq!(parse_dims("grid", "14x7").unwrap(), (14, 7));
        assert_eq!(parse_dims("grid", "5").unwrap(), (5, 5));
        assert!(parse_dims("grid", "0x3").is_err());
    }

    #[test]
    fn out_of_range_beta_rejected() {
        let args = RunArgs {
            beta: Some("1.5".into()),
            ..RunArgs::default()
        };
        assert!(Settings::resolve(&args).is_err());
    }
}
