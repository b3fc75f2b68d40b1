//! Run configuration: a flat `key = value` file, overridable key by key.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use levy_transport::decay_analysis::FitMode;
use levy_transport::io::Metadata;
use levy_transport::nonlocal_operator::{EvolutionConfig, OperatorSpec, QuadratureParams};
use levy_transport::stable_noise::{NoiseConfig, ScaleConvention, DEFAULT_MAX_REJECTS};
use levy_transport::transport_sim::{InitialCondition, McSettings, SpaceTimeGrid};

use crate::CliError;

/// Every parameter a command may consume. `workers` and `out_dir` only affect
/// where and how fast results are produced, so they are kept out of
/// [`RunConfig::to_metadata`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub m: usize,
    /// Explicit noise coefficients; `None` means `(0.5, 0, …, 0)` of length `m`.
    pub sigma: Option<Vec<f64>>,
    pub scale: ScaleConvention,
    pub jump_cutoff: f64,
    pub max_rejects: usize,

    pub bump_center: f64,
    pub bump_radius: f64,
    pub bump_amplitude: f64,

    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Explicit snapshot times; `None` means quarters of `t_max`.
    pub snapshots: Option<Vec<f64>>,

    pub pde_stride: usize,
    pub dt_pde: Option<f64>,

    pub n_samples: usize,
    pub seed: u64,
    pub path_index: u64,
    pub series_stride: usize,

    pub probe_x: f64,
    pub fit_window: (f64, f64),
    pub fit_mode: FitMode,
    pub replicates: usize,
    pub bootstrap_resamples: usize,
    pub chi_square_samples: usize,

    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            m: 2,
            sigma: None,
            scale: ScaleConvention::UnitS1,
            jump_cutoff: 1.0,
            max_rejects: DEFAULT_MAX_REJECTS,
            bump_center: 0.0,
            bump_radius: 0.1,
            bump_amplitude: 1.0,
            x_min: -1.0,
            x_max: 1.0,
            dx: 1e-3,
            dt: 1e-4,
            t_max: 2.0,
            snapshots: None,
            pde_stride: 5,
            dt_pde: None,
            n_samples: 5000,
            seed: 42,
            path_index: 0,
            series_stride: 10,
            probe_x: 0.0,
            fit_window: (0.5, 2.0),
            fit_mode: FitMode::FreeExponent,
            replicates: 0,
            bootstrap_resamples: 1000,
            chi_square_samples: 100_000,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full resolution: `dt = 1e-4`, 5000 samples.
    Full,
    /// `dt = 1e-3` and 1000 samples, for quick runs.
    Reduced,
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "full" => Ok(Preset::Full),
            "reduced" => Ok(Preset::Reduced),
            other => Err(CliError::Config(format!(
                "unknown preset `{other}` (expected full or reduced)"
            ))),
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{raw}`")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',').map(|s| parse::<f64>(key, s)).collect()
}

fn parse_pair(key: &str, raw: &str) -> Result<(f64, f64), CliError> {
    match parse_list(key, raw)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(CliError::Config(format!(
            "`{key}` needs two comma-separated values, got `{raw}`"
        ))),
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_fit_mode(raw: &str) -> Result<FitMode, CliError> {
    let raw = raw.trim();
    if raw == "free" {
        return Ok(FitMode::FreeExponent);
    }
    match raw.strip_prefix("fixed:") {
        Some(p) => Ok(FitMode::FixedExponent(parse("fit_mode", p)?)),
        None => Err(CliError::Config(format!(
            "`fit_mode`: expected `free` or `fixed:<p>`, got `{raw}`"
        ))),
    }
}

fn fit_mode_string(mode: FitMode) -> String {
    match mode {
        FitMode::FreeExponent => "free".into(),
        FitMode::FixedExponent(p) => format!("fixed:{p}"),
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self::default();
        if preset == Preset::Reduced {
            cfg.dt = 1e-3;
            cfg.n_samples = 1000;
            cfg.series_stride = 1;
        }
        cfg
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let raw = raw.trim();
        match key {
            "alpha" => self.alpha = parse(key, raw)?,
            "m" => self.m = parse(key, raw)?,
            "sigma" => self.sigma = Some(parse_list(key, raw)?),
            "scale" => self.scale = ScaleConvention::parse(raw)?,
            "jump_cutoff" => self.jump_cutoff = parse(key, raw)?,
            "max_rejects" => self.max_rejects = parse(key, raw)?,
            "bump_center" => self.bump_center = parse(key, raw)?,
            "bump_radius" => self.bump_radius = parse(key, raw)?,
            "bump_amplitude" => self.bump_amplitude = parse(key, raw)?,
            "x_min" => self.x_min = parse(key, raw)?,
            "x_max" => self.x_max = parse(key, raw)?,
            "dx" => self.dx = parse(key, raw)?,
            "dt" => self.dt = parse(key, raw)?,
            "t_max" => self.t_max = parse(key, raw)?,
            "snapshots" => self.snapshots = Some(parse_list(key, raw)?),
            "pde_stride" => self.pde_stride = parse(key, raw)?,
            "dt_pde" => {
                self.dt_pde = if raw == "auto" {
                    None
                } else {
                    Some(parse(key, raw)?)
                };
            }
            "n_samples" => self.n_samples = parse(key, raw)?,
            "seed" => self.seed = parse(key, raw)?,
            "path_index" => self.path_index = parse(key, raw)?,
            "series_stride" => self.series_stride = parse(key, raw)?,
            "probe_x" => self.probe_x = parse(key, raw)?,
            "fit_window" => self.fit_window = parse_pair(key, raw)?,
            "fit_mode" => self.fit_mode = parse_fit_mode(raw)?,
            "replicates" => self.replicates = parse(key, raw)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, raw)?,
            "chi_square_samples" => self.chi_square_samples = parse(key, raw)?,
            "workers" => self.workers = parse(key, raw)?,
            "out" => self.out_dir = PathBuf::from(raw),
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat configuration text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Rebuilds a configuration from an output header, ignoring keys that
    /// describe results rather than inputs.
    pub fn from_metadata(meta: &Metadata) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (k, v) in meta.entries() {
            if CONFIG_KEYS.contains(&k.as_str()) {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sigma_vector(&self) -> Vec<f64> {
        match &self.sigma {
            Some(s) => s.clone(),
            None => {
                let mut s = vec![0.0; self.m];
                if let Some(first) = s.first_mut() {
                    *first = 0.5;
                }
                s
            }
        }
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        match &self.snapshots {
            Some(s) => s.clone(),
            None => (0..=4).map(|k| self.t_max * k as f64 / 4.0).collect(),
        }
    }

    pub fn noise(&self) -> Result<NoiseConfig, CliError> {
        Ok(NoiseConfig::new(self.alpha, self.sigma_vector())?
            .with_jump_cutoff(self.jump_cutoff)?
            .with_max_rejects(self.max_rejects)?
            .with_scale(self.scale))
    }

    pub fn initial_condition(&self) -> Result<InitialCondition, CliError> {
        Ok(InitialCondition::bump(
            self.bump_center,
            self.bump_radius,
            self.bump_amplitude,
        )?)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid, CliError> {
        Ok(SpaceTimeGrid::new(
            self.x_min,
            self.x_max,
            self.dx,
            self.t_max,
            self.dt,
            self.snapshot_times(),
        )?)
    }

    pub fn pde_grid(&self) -> Result<SpaceTimeGrid, CliError> {
        Ok(self.grid()?.coarsen(self.pde_stride)?)
    }

    pub fn operator(&self) -> Result<OperatorSpec, CliError> {
        let pde_dx = self.pde_grid()?.dx();
        Ok(
            OperatorSpec::for_noise(&self.noise()?, QuadratureParams::default())?
                .aligned_to(pde_dx)?,
        )
    }

    pub fn evolution(&self) -> Result<EvolutionConfig, CliError> {
        Ok(EvolutionConfig::new(
            &self.operator()?,
            self.pde_grid()?,
            self.dt_pde,
        )?)
    }

    pub fn mc_settings(&self) -> McSettings {
        McSettings {
            n_samples: self.n_samples,
            master_seed: self.seed,
            workers: self.workers,
            probe_x: self.probe_x,
            series_stride: self.series_stride,
        }
    }

    /// Checks every component that can be built without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        let noise = self.noise()?;
        if let Some(s) = &self.sigma {
            if s.len() != self.m {
                return Err(CliError::Config(format!(
                    "sigma has {} components but m = {}",
                    s.len(),
                    self.m
                )));
            }
        }
        if noise.m() < 2 {
            return Err(CliError::Config("m must be at least 2".into()));
        }
        self.initial_condition()?;
        let grid = self.grid()?;
        self.pde_grid()?;
        if grid.node_index(self.probe_x).is_none() {
            return Err(CliError::Config(format!(
                "probe_x = {} is not a grid node",
                self.probe_x
            )));
        }
        if let Some(dt) = self.dt_pde {
            if !(dt > 0.0) {
                return Err(CliError::Config(format!("dt_pde = {dt} must be positive")));
            }
        }
        let (lo, hi) = self.fit_window;
        if !(0.0 < lo && lo < hi) {
            return Err(CliError::Config(format!(
                "fit_window ({lo}, {hi}) must satisfy 0 < lo < hi"
            )));
        }
        if self.n_samples < 2 {
            return Err(CliError::Config("n_samples must be at least 2".into()));
        }
        if self.series_stride == 0 {
            return Err(CliError::Config("series_stride must be positive".into()));
        }
        if self.replicates > 0 && self.replicates > self.n_samples / 2 {
            return Err(CliError::Config(format!(
                "{} replicates leave fewer than two samples each",
                self.replicates
            )));
        }
        Ok(())
    }

    /// All scientific inputs, in a fixed order, for output headers.
    pub fn to_metadata(&self) -> Metadata {
        let mut meta = Metadata::new();
        let mut put = |k: &str, v: &dyn Display| {
            meta.set(k, v);
        };
        put("alpha", &self.alpha);
        put("m", &self.m);
        put("sigma", &join(&self.sigma_vector()));
        put("scale", &self.scale.name());
        put("jump_cutoff", &self.jump_cutoff);
        put("max_rejects", &self.max_rejects);
        put("bump_center", &self.bump_center);
        put("bump_radius", &self.bump_radius);
        put("bump_amplitude", &self.bump_amplitude);
        put("x_min", &self.x_min);
        put("x_max", &self.x_max);
        put("dx", &self.dx);
        put("dt", &self.dt);
        put("t_max", &self.t_max);
        put("snapshots", &join(&self.snapshot_times()));
        put("pde_stride", &self.pde_stride);
        let dt_pde = self
            .dt_pde
            .map_or_else(|| "auto".to_string(), |d| d.to_string());
        put("dt_pde", &dt_pde);
        put("n_samples", &self.n_samples);
        put("seed", &self.seed);
        put("path_index", &self.path_index);
        put("series_stride", &self.series_stride);
        put("probe_x", &self.probe_x);
        put(
            "fit_window",
            &format!("{},{}", self.fit_window.0, self.fit_window.1),
        );
        put("fit_mode", &fit_mode_string(self.fit_mode));
        put("replicates", &self.replicates);
        put("bootstrap_resamples", &self.bootstrap_resamples);
        put("chi_square_samples", &self.chi_square_samples);
        meta
    }
}

/// Keys written by [`RunConfig::to_metadata`].
pub const CONFIG_KEYS: &[&str] = &[
    "alpha",
    "m",
    "sigma",
    "scale",
    "jump_cutoff",
    "max_rejects",
    "bump_center",
    "bump_radius",
    "bump_amplitude",
    "x_min",
    "x_max",
    "dx",
    "dt",
    "t_max",
    "snapshots",
    "pde_stride",
    "dt_pde",
    "n_samples",
    "seed",
    "path_index",
    "series_stride",
    "probe_x",
    "fit_window",
    "fit_mode",
    "replicates",
    "bootstrap_resamples",
    "chi_square_samples",
];
