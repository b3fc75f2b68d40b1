use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_transport_cli::{commands, CliError, Preset, Report, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "levy-transport",
    version,
    about = "Stochastic transport with truncated stable noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One pathwise solution with its L2 conservation table.
    SimulatePath,
    /// Monte Carlo mean, standard errors and decay series.
    SimulateMc,
    /// Finite-difference evolution of the averaged equation.
    EvolvePde,
    /// Measure identities, projection test, MC-vs-PDE and operator consistency.
    Validate {
        /// Reuse an `mc_mean.csv` instead of rerunning the Monte Carlo.
        #[arg(long)]
        mc_csv: Option<PathBuf>,
        /// Reuse a `pde.csv` instead of rerunning the evolution.
        #[arg(long)]
        pde_csv: Option<PathBuf>,
    },
    /// Power-law fit of the decay series, with log-log export and plot script.
    FitDecay {
        /// Fit a stored `t,value` series instead of running the Monte Carlo.
        #[arg(long)]
        series_csv: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Starting parameter set, applied before the file and flags.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "LEVY_TRANSPORT_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Comma-separated noise coefficients, e.g. "0.5,0".
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    dx: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    probe_x: Option<f64>,
    /// Comma-separated fit window, e.g. "0.5,2".
    #[arg(long, global = true)]
    fit_window: Option<String>,
    /// Extra `key=value` assignments, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn build(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::preset(self.preset.unwrap_or(Preset::Full));
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags: [(&str, Option<String>); 10] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("sigma", self.sigma.clone()),
            ("dt", self.dt.map(|v| v.to_string())),
            ("dx", self.dx.map(|v| v.to_string())),
            ("t_max", self.t_max.map(|v| v.to_string())),
            ("n_samples", self.n_samples.map(|v| v.to_string())),
            ("probe_x", self.probe_x.map(|v| v.to_string())),
            ("fit_window", self.fit_window.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for assignment in &self.set {
            let (k, v) = assignment.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set expects KEY=VALUE, got `{assignment}`"))
            })?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<Report, CliError> {
    let cfg = cli.common.build()?;
    match &cli.command {
        Command::SimulatePath => commands::simulate_path(&cfg),
        Command::SimulateMc => commands::simulate_mc(&cfg),
        Command::EvolvePde => commands::evolve_pde(&cfg),
        Command::Validate { mc_csv, pde_csv } => {
            commands::validate(&cfg, mc_csv.as_deref(), pde_csv.as_deref())
        }
        Command::FitDecay { series_csv } => commands::fit_decay(&cfg, series_csv.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for file in &report.files {
                println!("wrote {}", file.display());
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
