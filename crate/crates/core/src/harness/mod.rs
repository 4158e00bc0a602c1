//! Experiment drivers. Each experiment writes one CSV per figure panel and
//! a `manifest.txt` of `key=value` lines into the output directory.

pub mod experiments;

pub use experiments::{beta_success_probs, heavy_tail_checkpoints};

use crate::error::{param, Error, Result};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    FigBounds,
    FigEfficiency,
    ToyClt,
    Binomial,
    HeavyTail,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::FigBounds,
        ExperimentId::FigEfficiency,
        ExperimentId::ToyClt,
        ExperimentId::Binomial,
        ExperimentId::HeavyTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::FigBounds => "fig-bounds",
            ExperimentId::FigEfficiency => "fig-efficiency",
            ExperimentId::ToyClt => "toy-clt",
            ExperimentId::Binomial => "binomial",
            ExperimentId::HeavyTail => "heavy-tail",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown experiment `{s}`")))
    }
}

/// Everything an experiment run depends on. Iteration counts are the
/// paper's, multiplied by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub scale: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub dim: usize,
    pub lambda: f64,
    pub quad_tol: f64,
    /// σ grid for fig-bounds and fig-efficiency.
    pub sigma_grid: Vec<f64>,
    pub eps_values: Vec<f64>,
    pub clt_sigmas: Vec<f64>,
    pub clt_iters: usize,
    pub particles: Vec<u64>,
    pub binomial_t: usize,
    pub beta_shape: (f64, f64),
    pub binomial_iters: usize,
    /// Independent chains pooled for each ESS value.
    pub ess_replicates: usize,
    pub batch_count: usize,
    pub heavy_shapes: Vec<f64>,
    pub heavy_chains: usize,
    pub heavy_replicates: usize,
    pub heavy_iters: usize,
}

fn grid(lo: f64, step: f64, count: usize) -> Vec<f64> {
    // rounded so the grid values print as typed
    (0..count)
        .map(|i| ((lo + step * i as f64) * 1e6).round() / 1e6)
        .collect()
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            id,
            scale: 0.1,
            seed,
            out_dir: out_dir.into(),
            threads: 0,
            dim: 3,
            lambda: 1.4,
            quad_tol: 1e-9,
            sigma_grid: grid(0.1, 0.05, 43),
            eps_values: vec![1.0, 0.5, 0.2, 0.05, 0.0],
            clt_sigmas: grid(0.2, 0.2, 10),
            clt_iters: 200_000,
            particles: vec![32, 64, 128, 256, 512, 1024],
            binomial_t: 30,
            beta_shape: (5.0, 45.0),
            binomial_iters: 100_000,
            ess_replicates: 100,
            batch_count: 20,
            heavy_shapes: vec![1.5, 2.5],
            heavy_chains: 50,
            heavy_replicates: 3,
            heavy_iters: 1_000_000,
        }
    }

    /// Iterations actually run for a paper count of `full`.
    pub fn scaled(&self, full: usize) -> usize {
        ((full as f64 * self.scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(param(format!(
                "scale must lie in (0, 1], got {}",
                self.scale
            )));
        }
        if self.dim == 0 || !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(param("need dim ≥ 1 and λ > 0"));
        }
        if !(self.quad_tol > 0.0) {
            return Err(param("quadrature tolerance must be positive"));
        }
        if self
            .sigma_grid
            .iter()
            .chain(&self.clt_sigmas)
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(param("σ grids must be positive"));
        }
        if self.eps_values.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(param("ε values must lie in [0, 1]"));
        }
        if self.particles.contains(&0) || self.binomial_t == 0 {
            return Err(param("particle counts and T must be positive"));
        }
        if !(self.beta_shape.0 > 0.0 && self.beta_shape.1 > 0.0) {
            return Err(param("Beta shapes must be positive"));
        }
        if self
            .heavy_shapes
            .iter()
            .any(|a| !(*a > 1.0 && a.is_finite()))
        {
            return Err(param("Pareto shapes must exceed 1"));
        }
        if self.ess_replicates == 0 || self.heavy_replicates == 0 {
            return Err(param("replicate counts must be positive"));
        }
        if self.heavy_chains < crate::diagnostics::MIN_ESTIMATES {
            return Err(param(format!(
                "heavy-tail needs at least {} chains",
                crate::diagnostics::MIN_ESTIMATES
            )));
        }
        Ok(())
    }

    /// Applies one `key=value` setting, as found in config files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Input(format!("`{key}`: cannot parse `{v}`")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|x| num(key, x)).collect()
        }
        match key {
            "experiment" => self.id = value.trim().parse()?,
            "scale" => self.scale = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value.trim()),
            "threads" => self.threads = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "quad_tol" => self.quad_tol = num(key, value)?,
            "sigma_grid" => self.sigma_grid = list(key, value)?,
            "eps_values" => self.eps_values = list(key, value)?,
            "clt_sigmas" => self.clt_sigmas = list(key, value)?,
            "clt_iters" => self.clt_iters = num(key, value)?,
            "particles" => self.particles = list(key, value)?,
            "binomial_t" => self.binomial_t = num(key, value)?,
            "beta_shape" => {
                let v: Vec<f64> = list(key, value)?;
                let [a, b] = v[..] else {
                    return Err(Error::Input("`beta_shape` takes two values".into()));
                };
                self.beta_shape = (a, b);
            }
            "binomial_iters" => self.binomial_iters = num(key, value)?,
            "ess_replicates" => self.ess_replicates = num(key, value)?,
            "batch_count" => self.batch_count = num(key, value)?,
            "heavy_shapes" => self.heavy_shapes = list(key, value)?,
            "heavy_chains" => self.heavy_chains = num(key, value)?,
            "heavy_replicates" => self.heavy_replicates = num(key, value)?,
            "heavy_iters" => self.heavy_iters = num(key, value)?,
            _ => return Err(Error::Input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn manifest_entries(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut kv = vec![
            ("experiment", self.id.to_string()),
            ("seed", self.seed.to_string()),
            ("scale", self.scale.to_string()),
            ("threads", self.threads.to_string()),
            ("version", env!("CARGO_PKG_VERSION").to_string()),
            ("dim", self.dim.to_string()),
            ("lambda", self.lambda.to_string()),
        ];
        match self.id {
            ExperimentId::FigBounds => {
                kv.push(("quad_tol", self.quad_tol.to_string()));
                kv.push(("sigma_grid", join(&self.sigma_grid)));
            }
            ExperimentId::FigEfficiency => {
                kv.push(("sigma_grid", join(&self.sigma_grid)));
                kv.push(("eps_values", join(&self.eps_values)));
            }
            ExperimentId::ToyClt => {
                kv.push(("clt_sigmas", join(&self.clt_sigmas)));
                kv.push(("iterations", self.scaled(self.clt_iters).to_string()));
                kv.push(("ess_replicates", self.ess_replicates.to_string()));
                kv.push(("batch_count", self.batch_count.to_string()));
            }
            ExperimentId::Binomial => {
                let p: Vec<String> = self.particles.iter().map(|n| n.to_string()).collect();
                kv.push(("particles", p.join(",")));
                kv.push(("binomial_t", self.binomial_t.to_string()));
                kv.push((
                    "beta_shape",
                    format!("{},{}", self.beta_shape.0, self.beta_shape.1),
                ));
                kv.push(("beta_seed", experiments::beta_seed(self.seed).to_string()));
                kv.push(("iterations", self.scaled(self.binomial_iters).to_string()));
                kv.push(("ess_replicates", self.ess_replicates.to_string()));
                kv.push(("batch_count", self.batch_count.to_string()));
            }
            ExperimentId::HeavyTail => {
                kv.push(("heavy_shapes", join(&self.heavy_shapes)));
                kv.push(("heavy_chains", self.heavy_chains.to_string()));
                kv.push(("heavy_replicates", self.heavy_replicates.to_string()));
                kv.push(("iterations", self.scaled(self.heavy_iters).to_string()));
            }
        }
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Input(format!(
                "{}:{}: expected key=value",
                path.display(),
                i + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Runs one experiment and writes its CSVs and manifest. On failure the
/// manifest still records the configuration and the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    let result = pool.install(|| experiments::run(config));
    let manifest = config.out_dir.join("manifest.txt");
    let mut lines: Vec<String> = config
        .manifest_entries()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    match &result {
        Ok(files) => {
            lines.push("status=ok".into());
            for f in files {
                lines.push(format!(
                    "file={}",
                    f.file_name()
                        .map(|s| s.to_string_lossy())
                        .unwrap_or_default()
                ));
            }
        }
        Err(e) => {
            lines.push("status=failed".into());
            lines.push(format!("error={}", e.to_string().replace('\n', " ")));
        }
    }
    std::fs::write(&manifest, lines.join("\n") + "\n")?;
    let files = result?;
    Ok(ExperimentOutput { files, manifest })
}

/// Reads a `manifest.txt` back into ordered pairs.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    read_config_file(path)
}
