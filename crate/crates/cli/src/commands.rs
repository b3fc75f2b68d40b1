use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use levy_transport::decay_analysis::{
    bootstrap_exponent_ci, fit_power_law, loglog_export, BootstrapCi, DecayFit, FitMode,
};
use levy_transport::io::{
    read_commented_csv, read_field_csv, write_field_csv, write_table, FieldSnapshot, Metadata,
};
use levy_transport::levy_measure::{radial_integral, validate_projection, MeasureParams};
use levy_transport::nonlocal_operator::{
    compare_mc_pde, evolve, operator_consistency_check, ComparisonReport,
};
use levy_transport::stable_noise::{self, RngStream};
use levy_transport::transport_sim::{
    l2_norm, monte_carlo_mean, pathwise_solution, McResult, ScalarField, SpaceTimeGrid,
};
use statrs::function::beta::beta;

use crate::config::RunConfig;
use crate::CliError;

/// Relative L² drift allowed for a pathwise run.
pub const CONSERVATION_TOLERANCE: f64 = 1e-10;
pub const BETA_TOLERANCE: f64 = 1e-8;
pub const PROJECTION_P_THRESHOLD: f64 = 1e-3;
/// `(m, α, r_min)` for the projection goodness-of-fit checks.
pub const PROJECTION_POINTS: [(usize, f64, f64); 2] = [(2, 1.5, 0.1), (5, 0.5, 0.2)];
pub const CONSISTENCY_TOLERANCE: f64 = 1e-6;
/// Fraction of `sup u₀` used as the discretization allowance.
pub const ALLOWANCE_FRACTION: f64 = 0.05;
pub const TARGET_EXPONENT: f64 = -2.0 / 3.0;
pub const EXPONENT_HALF_WIDTH: f64 = 0.15;

/// Stream indices reserved for checks that do not belong to a sample path.
const PROJECTION_STREAM_BASE: u64 = u64::MAX - 16;
const BOOTSTRAP_STREAM: u64 = u64::MAX - 1;

/// What a command did: human-readable lines, files written and whether every
/// scientific check it ran passed.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

impl Report {
    fn new() -> Self {
        Self {
            passed: true,
            ..Self::default()
        }
    }

    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn check(&mut self, ok: bool, what: impl AsRef<str>) {
        self.passed &= ok;
        self.line(format!(
            "[{}] {}",
            if ok { "pass" } else { "FAIL" },
            what.as_ref()
        ));
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((BufWriter::new(File::create(&path)?), path))
}

fn header(cfg: &RunConfig, command: &str) -> Metadata {
    let mut meta = Metadata::new();
    meta.set("command", command);
    meta.extend(&cfg.to_metadata());
    meta
}

fn save_table(
    report: &mut Report,
    cfg: &RunConfig,
    name: &str,
    meta: &Metadata,
    headers: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let (mut out, path) = create(&cfg.out_dir, name)?;
    write_table(&mut out, meta, headers, rows)?;
    out.flush()?;
    report.files.push(path);
    Ok(())
}

fn save_fields(
    report: &mut Report,
    cfg: &RunConfig,
    name: &str,
    meta: &Metadata,
    snapshots: &[FieldSnapshot],
) -> Result<(), CliError> {
    let (mut out, path) = create(&cfg.out_dir, name)?;
    write_field_csv(&mut out, meta, snapshots)?;
    out.flush()?;
    report.files.push(path);
    Ok(())
}

fn snapshots(
    grid: &SpaceTimeGrid,
    fields: &[ScalarField],
    stderr: Option<&[ScalarField]>,
) -> Vec<FieldSnapshot> {
    let x = grid.nodes();
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| FieldSnapshot {
            time: f.time,
            x: x.clone(),
            values: f.values.clone(),
            stderr: stderr.map_or_else(|| vec![0.0; x.len()], |s| s[k].values.clone()),
        })
        .collect()
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

pub fn simulate_path(cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let noise = cfg.noise()?;
    let grid = cfg.grid()?;
    let ic = cfg.initial_condition()?;
    let mut rng = RngStream::new(cfg.seed, cfg.path_index);
    let path = stable_noise::simulate_path(&noise, cfg.t_max, cfg.dt, &mut rng)?;
    let sol = pathwise_solution(&ic, &noise, &path, &grid)?;

    let mut report = Report::new();
    let mut meta = header(cfg, "simulate-path");
    meta.set("rejections", path.rejections());
    save_fields(
        &mut report,
        cfg,
        "path_snapshots.csv",
        &meta,
        &snapshots(&grid, &sol.fields, None),
    )?;

    let l2_0 = l2_norm(&sol.fields[0], grid.dx());
    let sup_0 = ic.sup_norm();
    let mut rows = Vec::new();
    let mut worst_drift: f64 = 0.0;
    let mut sup_exact = true;
    for (k, field) in sol.fields.iter().enumerate() {
        let l2 = l2_norm(field, grid.dx());
        let drift = (l2 - l2_0).abs() / l2_0;
        if sol.interior[k] {
            worst_drift = worst_drift.max(drift);
        }
        sup_exact &= sol.sup_norms[k] == sup_0;
        rows.push(vec![
            s(field.time),
            s(sol.shifts[k]),
            s(l2),
            s(drift),
            s(sol.sup_norms[k]),
            s(sol.sup_norms[k] - sup_0),
            s(sol.interior[k]),
        ]);
    }
    save_table(
        &mut report,
        cfg,
        "conservation.csv",
        &meta,
        &[
            "t",
            "shift",
            "l2_norm",
            "relative_l2_drift",
            "sup_norm",
            "sup_drift",
            "interior",
        ],
        &rows,
    )?;
    let interior = sol.interior.iter().filter(|b| **b).count();
    report.check(
        worst_drift <= CONSERVATION_TOLERANCE,
        format!(
            "L2 conservation: max relative drift {worst_drift:e} over {interior}/{} interior snapshots (tolerance {CONSERVATION_TOLERANCE:e})",
            sol.fields.len()
        ),
    );
    report.check(sup_exact, format!("sup norm preserved exactly at {sup_0}"));
    Ok(report)
}

/// Result of the averaged-dissipation check between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationCheck {
    pub t_early: f64,
    pub t_late: f64,
    pub drop: f64,
    pub pooled_stderr: f64,
    pub pass: bool,
}

/// Compares `max U(t_early)` with `max U(t_late)`; the drop must exceed two
/// pooled standard errors `√(se₁² + se₂²)` taken at the two maximisers.
pub fn dissipation_check(
    mean: &[ScalarField],
    stderr: &[ScalarField],
    early: usize,
    late: usize,
) -> DissipationCheck {
    let argmax = |f: &ScalarField| {
        f.values
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            )
    };
    let (ia, va) = argmax(&mean[early]);
    let (ib, vb) = argmax(&mean[late]);
    let pooled = stderr[early].values[ia].hypot(stderr[late].values[ib]);
    let drop = va - vb;
    DissipationCheck {
        t_early: mean[early].time,
        t_late: mean[late].time,
        drop,
        pooled_stderr: pooled,
        pass: drop > 2.0 * pooled,
    }
}

pub fn run_mc(cfg: &RunConfig) -> Result<McResult, CliError> {
    Ok(monte_carlo_mean(
        &cfg.initial_condition()?,
        &cfg.noise()?,
        &cfg.grid()?,
        &cfg.mc_settings(),
    )?)
}

pub fn simulate_mc(cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mc = run_mc(cfg)?;
    let mut report = Report::new();
    let mut meta = header(cfg, "simulate-mc");
    meta.set("rejections", mc.rejections);
    meta.set(
        "exits",
        mc.exits
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    save_fields(
        &mut report,
        cfg,
        "mc_mean.csv",
        &meta,
        &snapshots(&grid, &mc.mean, Some(&mc.stderr)),
    )?;
    let rows: Vec<Vec<String>> = mc
        .probe_times
        .iter()
        .zip(&mc.probe_mean)
        .zip(&mc.probe_stderr)
        .map(|((t, v), e)| vec![s(t), s(v), s(e)])
        .collect();
    save_table(
        &mut report,
        cfg,
        "decay_series.csv",
        &meta,
        &["t", "value", "stderr"],
        &rows,
    )?;
    report.line(format!(
        "{} samples, {} rejected increments, max mean per snapshot: {}",
        mc.n_samples,
        mc.rejections,
        mc.mean
            .iter()
            .map(|f| format!("{:.6}", f.max()))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    let first_positive = mc.mean.iter().position(|f| f.time > 0.0);
    match first_positive {
        Some(early) if early + 1 < mc.mean.len() => {
            let d = dissipation_check(&mc.mean, &mc.stderr, early, mc.mean.len() - 1);
            report.check(
                d.pass,
                format!(
                    "averaged dissipation: max U drops by {:.6} from t = {} to t = {} (2 pooled SE = {:.6})",
                    d.drop,
                    d.t_early,
                    d.t_late,
                    2.0 * d.pooled_stderr
                ),
            );
        }
        _ => {
            report.line("averaged dissipation: fewer than two positive snapshot times, not checked")
        }
    }
    Ok(report)
}

pub fn evolve_pde(cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let evo_cfg = cfg.evolution()?;
    let evo = evolve(&cfg.initial_condition()?, &evo_cfg)?;
    let grid = &evo_cfg.grid;
    let mut report = Report::new();
    let mut meta = header(cfg, "evolve-pde");
    meta.set("pde_dx", grid.dx())
        .set("stability_bound", evo_cfg.stability_bound)
        .set("max_symbol", evo_cfg.worst_mode)
        .set("alternating_symbol", evo_cfg.alternating_mode)
        .set("dt_pde_used", evo.dt_used)
        .set("steps", evo.steps)
        .set("stencil_half_width", evo_cfg.stencil.half_width);
    save_fields(
        &mut report,
        cfg,
        "pde.csv",
        &meta,
        &snapshots(grid, &evo.fields, None),
    )?;
    report.line(format!(
        "{} forward Euler steps of at most {:e} (stability bound {:e})",
        evo.steps, evo.dt_used, evo_cfg.stability_bound
    ));
    if let Some(i) = grid.node_index(cfg.probe_x) {
        let series: Vec<f64> = evo.fields.iter().map(|f| f.values[i]).collect();
        let decreasing = series.windows(2).all(|w| w[1] < w[0]);
        report.line(format!(
            "U(t, {}) at snapshots: {} ({})",
            cfg.probe_x,
            series
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(" "),
            if decreasing {
                "strictly decreasing"
            } else {
                "not strictly decreasing"
            }
        ));
    }
    Ok(report)
}

/// A snapshot set read back from a field CSV, with its header.
#[derive(Debug, Clone)]
pub struct LoadedFields {
    pub meta: Metadata,
    pub x: Vec<f64>,
    pub values: Vec<ScalarField>,
    pub stderr: Vec<ScalarField>,
}

pub fn load_fields(path: &Path) -> Result<LoadedFields, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let (meta, snaps) = read_field_csv(BufReader::new(file))?;
    let x = snaps.first().map(|s| s.x.clone()).unwrap_or_default();
    if snaps.iter().any(|s| s.x != x) {
        return Err(CliError::Config(format!(
            "{}: snapshots use different nodes",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut stderr = Vec::new();
    for snap in snaps {
        values.push(ScalarField::new(snap.time, snap.values)?);
        stderr.push(ScalarField::new(snap.time, snap.stderr)?);
    }
    Ok(LoadedFields {
        meta,
        x,
        values,
        stderr,
    })
}

/// Stride that maps the coarse nodes onto the fine ones, if they nest.
pub fn nesting_stride(fine: &[f64], coarse: &[f64]) -> Result<usize, CliError> {
    let mismatch = || {
        CliError::Config(format!(
            "{} fine nodes do not nest {} coarse nodes",
            fine.len(),
            coarse.len()
        ))
    };
    if coarse.len() < 2 || fine.len() < coarse.len() || (fine.len() - 1) % (coarse.len() - 1) != 0 {
        return Err(mismatch());
    }
    let stride = (fine.len() - 1) / (coarse.len() - 1);
    let scale = fine.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let aligned = coarse
        .iter()
        .enumerate()
        .all(|(i, x)| (fine[i * stride] - x).abs() <= 1e-12 * scale);
    if aligned {
        Ok(stride)
    } else {
        Err(mismatch())
    }
}

/// Keys that must agree between an MC file and a PDE file being compared.
const PHYSICS_KEYS: &[&str] = &[
    "alpha",
    "m",
    "sigma",
    "scale",
    "jump_cutoff",
    "bump_center",
    "bump_radius",
    "bump_amplitude",
    "x_min",
    "x_max",
    "snapshots",
];

fn check_compatible(a: &Metadata, b: &Metadata) -> Result<(), CliError> {
    for key in PHYSICS_KEYS {
        if a.get(key) != b.get(key) {
            return Err(CliError::Config(format!(
                "MC and PDE inputs disagree on `{key}`: {:?} vs {:?}",
                a.get(key),
                b.get(key)
            )));
        }
    }
    Ok(())
}

/// MC-versus-PDE comparison on the PDE nodes, with the MC fields subsampled.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: ComparisonReport,
    /// `0.05 · sup u₀`.
    pub allowance: f64,
    /// Per snapshot: `sup ≤ max(3·pooled, allowance)`.
    pub within: Vec<bool>,
}

pub fn cross_validate(
    mc: &LoadedFields,
    pde: &LoadedFields,
    sup_u0: f64,
) -> Result<CrossValidation, CliError> {
    check_compatible(&mc.meta, &pde.meta)?;
    let stride = nesting_stride(&mc.x, &pde.x)?;
    let mean: Vec<ScalarField> = mc.values.iter().map(|f| f.subsample(stride)).collect();
    let se: Vec<ScalarField> = mc.stderr.iter().map(|f| f.subsample(stride)).collect();
    let dx = (pde.x[pde.x.len() - 1] - pde.x[0]) / (pde.x.len() - 1) as f64;
    let allowance = ALLOWANCE_FRACTION * sup_u0;
    let report = compare_mc_pde(&mean, &pde.values, &se, dx, allowance)?;
    let within = report
        .rows
        .iter()
        .map(|r| r.sup_discrepancy <= (3.0 * r.pooled_stderr).max(allowance))
        .collect();
    Ok(CrossValidation {
        report,
        allowance,
        within,
    })
}

impl LoadedFields {
    /// Wraps freshly computed fields; missing standard errors are zero.
    pub fn in_memory(
        meta: Metadata,
        grid: &SpaceTimeGrid,
        values: Vec<ScalarField>,
        stderr: Option<Vec<ScalarField>>,
    ) -> Self {
        let stderr = stderr.unwrap_or_else(|| {
            values
                .iter()
                .map(|f| ScalarField {
                    time: f.time,
                    values: vec![0.0; f.values.len()],
                })
                .collect()
        });
        LoadedFields {
            meta,
            x: grid.nodes(),
            values,
            stderr,
        }
    }
}

pub fn validate(
    cfg: &RunConfig,
    mc_csv: Option<&Path>,
    pde_csv: Option<&Path>,
) -> Result<Report, CliError> {
    cfg.validate()?;
    let mut report = Report::new();
    let meta = header(cfg, "validate");

    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for m in [2usize, 3, 5, 10] {
        for alpha in [0.5, 1.0, 1.5] {
            let got = radial_integral(&MeasureParams::new(alpha, m)?)?;
            let exact = 0.5 * beta((m as f64 - 1.0) / 2.0, (alpha + 1.0) / 2.0);
            let err = (got - exact).abs();
            worst = worst.max(err);
            rows.push(vec![
                s(m),
                s(alpha),
                s(got),
                s(exact),
                s(err),
                s(err <= BETA_TOLERANCE),
            ]);
        }
    }
    save_table(
        &mut report,
        cfg,
        "beta_table.csv",
        &meta,
        &[
            "m",
            "alpha",
            "radial_integral",
            "half_beta",
            "abs_error",
            "pass",
        ],
        &rows,
    )?;
    report.check(
        worst <= BETA_TOLERANCE,
        format!("radial integral vs Beta identity: max error {worst:e} over 12 points"),
    );

    let mut rows = Vec::new();
    for (k, &(m, alpha, r_min)) in PROJECTION_POINTS.iter().enumerate() {
        let mut rng = RngStream::new(cfg.seed, PROJECTION_STREAM_BASE + k as u64);
        let pr = validate_projection(
            &MeasureParams::new(alpha, m)?,
            r_min,
            cfg.chi_square_samples,
            &mut rng,
        )?;
        let ok = pr.p_value > PROJECTION_P_THRESHOLD;
        rows.push(vec![
            s(m),
            s(alpha),
            s(r_min),
            s(pr.n_samples),
            s(pr.observed.len()),
            s(pr.chi_square),
            s(pr.degrees_of_freedom),
            s(pr.p_value),
            s(ok),
        ]);
        report.check(
            ok,
            format!(
                "projection chi-square at m = {m}, alpha = {alpha}: chi2 = {:.2} on {} dof, p = {:.4}",
                pr.chi_square, pr.degrees_of_freedom, pr.p_value
            ),
        );
    }
    save_table(
        &mut report,
        cfg,
        "projection.csv",
        &meta,
        &[
            "m",
            "alpha",
            "r_min",
            "n_samples",
            "bins",
            "chi_square",
            "dof",
            "p_value",
            "pass",
        ],
        &rows,
    )?;

    let mc = match mc_csv {
        Some(p) => load_fields(p)?,
        None => {
            let r = run_mc(cfg)?;
            LoadedFields::in_memory(cfg.to_metadata(), &cfg.grid()?, r.mean, Some(r.stderr))
        }
    };
    let pde = match pde_csv {
        Some(p) => load_fields(p)?,
        None => {
            let evo_cfg = cfg.evolution()?;
            let evo = evolve(&cfg.initial_condition()?, &evo_cfg)?;
            LoadedFields::in_memory(cfg.to_metadata(), &evo_cfg.grid, evo.fields, None)
        }
    };
    let cv = cross_validate(&mc, &pde, cfg.initial_condition()?.sup_norm())?;
    let rows: Vec<Vec<String>> = cv
        .report
        .rows
        .iter()
        .zip(&cv.within)
        .map(|(r, w)| {
            vec![
                s(r.time),
                s(r.sup_discrepancy),
                s(r.l2_discrepancy),
                s(r.pooled_stderr),
                s((3.0 * r.pooled_stderr).max(cv.allowance)),
                s(w),
            ]
        })
        .collect();
    let mut cmp_meta = meta.clone();
    cmp_meta.set("allowance", cv.allowance);
    if let Some(p) = mc_csv {
        cmp_meta.set("mc_csv", p.display());
    }
    if let Some(p) = pde_csv {
        cmp_meta.set("pde_csv", p.display());
    }
    save_table(
        &mut report,
        cfg,
        "comparison.csv",
        &cmp_meta,
        &[
            "t",
            "sup_discrepancy",
            "l2_discrepancy",
            "pooled_stderr",
            "tolerance",
            "pass",
        ],
        &rows,
    )?;
    let worst_row = cv
        .report
        .rows
        .iter()
        .map(|r| r.sup_discrepancy)
        .fold(0.0f64, f64::max);
    report.check(
        cv.within.iter().all(|w| *w),
        format!(
            "MC vs PDE: max sup discrepancy {worst_row:.6} over {} snapshots (allowance {:.4})",
            cv.within.len(),
            cv.allowance
        ),
    );

    if cfg.alpha > 1.0 {
        let cr = operator_consistency_check(cfg.alpha, 1.0)?;
        let rows: Vec<Vec<String>> = cr
            .per_function
            .iter()
            .map(|(f, gap)| vec![format!("{f:?}"), s(gap), s(*gap <= CONSISTENCY_TOLERANCE)])
            .collect();
        save_table(
            &mut report,
            cfg,
            "consistency.csv",
            &meta,
            &["function", "max_discrepancy", "pass"],
            &rows,
        )?;
        report.check(
            cr.max_discrepancy <= CONSISTENCY_TOLERANCE,
            format!(
                "full-line operator vs fractional Laplacian at theta = 1: max gap {:e}",
                cr.max_discrepancy
            ),
        );
    } else {
        report.line(format!(
            "operator consistency skipped: the identity needs alpha > 1 (alpha = {})",
            cfg.alpha
        ));
    }
    Ok(report)
}

/// Reads a `t, value` series, as written to `decay_series.csv`.
pub fn load_series(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let (_, table) = read_commented_csv(BufReader::new(file))?;
    let t = table.f64_column("t")?;
    let v = table.f64_column("value")?;
    Ok(t.into_iter().zip(v).collect())
}

/// Master seed for bootstrap replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64 + 1)
}

/// The decay fit and the data it was computed from.
#[derive(Debug, Clone)]
pub struct DecayOutcome {
    pub series: Vec<(f64, f64)>,
    pub fit: DecayFit,
    pub bootstrap: Option<BootstrapCi>,
}

pub fn decay_outcome(cfg: &RunConfig, series_csv: Option<&Path>) -> Result<DecayOutcome, CliError> {
    if let Some(p) = series_csv {
        let series = load_series(p)?;
        let fit = fit_power_law(&series, cfg.fit_window, cfg.fit_mode)?;
        return Ok(DecayOutcome {
            series,
            fit,
            bootstrap: None,
        });
    }
    if cfg.replicates == 0 {
        let series = run_mc(cfg)?.probe_series();
        let fit = fit_power_law(&series, cfg.fit_window, cfg.fit_mode)?;
        return Ok(DecayOutcome {
            series,
            fit,
            bootstrap: None,
        });
    }
    let per = cfg.n_samples / cfg.replicates;
    let mut replicates = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let mut rcfg = cfg.clone();
        rcfg.n_samples = per;
        rcfg.seed = replicate_seed(cfg.seed, r);
        replicates.push(run_mc(&rcfg)?.probe_series());
    }
    let k = replicates.len() as f64;
    let series: Vec<(f64, f64)> = (0..replicates[0].len())
        .map(|i| {
            (
                replicates[0][i].0,
                replicates.iter().map(|r| r[i].1).sum::<f64>() / k,
            )
        })
        .collect();
    let fit = fit_power_law(&series, cfg.fit_window, cfg.fit_mode)?;
    let mut rng = RngStream::new(cfg.seed, BOOTSTRAP_STREAM);
    let ci = bootstrap_exponent_ci(
        &replicates,
        cfg.fit_window,
        cfg.bootstrap_resamples,
        &mut rng,
    )?;
    Ok(DecayOutcome {
        series,
        fit,
        bootstrap: Some(ci),
    })
}

fn gnuplot_script(fit: &DecayFit) -> String {
    format!(
        "# Usage: gnuplot -p decay_plot.gp (run inside the output directory)\n\
         set datafile commentschars '#'\n\
         set datafile separator ','\n\
         set key top right\n\
         set xlabel 'log t'\n\
         set ylabel 'log U(t, x0)'\n\
         set title 'fitted exponent {:.4}'\n\
         plot 'loglog.csv' every ::1 using 1:2 with points pt 7 ps 0.3 title 'data', \\\n\
         \x20    'loglog.csv' every ::1 using 1:3 with lines lw 2 title 'fit'\n",
        fit.exponent
    )
}

pub fn fit_decay(cfg: &RunConfig, series_csv: Option<&Path>) -> Result<Report, CliError> {
    cfg.validate()?;
    let outcome = decay_outcome(cfg, series_csv)?;
    let fit = &outcome.fit;
    let mut report = Report::new();
    let mut meta = header(cfg, "fit-decay");
    if let Some(p) = series_csv {
        meta.set("series_csv", p.display());
    }
    let mut fit_rows = vec![
        vec![s("beta"), s(fit.beta)],
        vec![s("exponent"), s(fit.exponent)],
        vec![s("log_rms_residual"), s(fit.residual_error)],
        vec![s("n_points"), s(fit.n_points)],
        vec![s("mode"), s(fit.mode.name())],
    ];
    if let Some(ci) = &outcome.bootstrap {
        fit_rows.push(vec![s("bootstrap_lower"), s(ci.lower)]);
        fit_rows.push(vec![s("bootstrap_upper"), s(ci.upper)]);
        fit_rows.push(vec![s("bootstrap_level"), s(ci.level)]);
        fit_rows.push(vec![s("bootstrap_resamples"), s(ci.resamples)]);
    }
    save_table(
        &mut report,
        cfg,
        "fit.csv",
        &meta,
        &["quantity", "value"],
        &fit_rows,
    )?;

    let export = loglog_export(&outcome.series, fit)?;
    let rows: Vec<Vec<String>> = export
        .rows
        .iter()
        .map(|r| vec![s(r.log_t), s(r.log_value), s(r.log_fit)])
        .collect();
    save_table(
        &mut report,
        cfg,
        "loglog.csv",
        &meta,
        &["log_t", "log_value", "log_fit"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = export
        .tail
        .iter()
        .map(|r| {
            vec![
                s(r.t),
                s(r.value),
                s(r.fit_value),
                s(r.abs_residual),
                s(r.log_residual),
            ]
        })
        .collect();
    save_table(
        &mut report,
        cfg,
        "tail.csv",
        &meta,
        &["t", "value", "fit_value", "abs_residual", "log_residual"],
        &rows,
    )?;
    let (mut out, path) = create(&cfg.out_dir, "decay_plot.gp")?;
    out.write_all(gnuplot_script(fit).as_bytes())?;
    out.flush()?;
    report.files.push(path);

    report
        .lines
        .extend(fit.summary().lines().map(str::to_string));
    if let Some((lo, hi)) = export.tail_residual_range() {
        report.line(format!(
            "tail residuals on {:?}: {lo:e} to {hi:e}",
            export.tail_window
        ));
    }
    if let Some(ci) = &outcome.bootstrap {
        report.line(format!(
            "bootstrap {:.0}% interval for the exponent: [{:.4}, {:.4}] ({} resamples)",
            100.0 * ci.level,
            ci.lower,
            ci.upper,
            ci.resamples
        ));
    }
    if fit.mode == FitMode::FreeExponent {
        let gap = (fit.exponent - TARGET_EXPONENT).abs();
        report.check(
            gap <= EXPONENT_HALF_WIDTH,
            format!(
                "decay exponent {:.4} within {EXPONENT_HALF_WIDTH} of {TARGET_EXPONENT:.4}",
                fit.exponent
            ),
        );
    }
    Ok(report)
}
