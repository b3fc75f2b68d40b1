//! Power-law fits `U(t) ≈ β t^p` of a decay series in log-log coordinates.

use rand::Rng;

use crate::error::{invalid, Error, Result};

pub const MIN_FIT_POINTS: usize = 20;
pub const MIN_REPLICATES: usize = 8;
/// Window over which tail residuals are tabulated.
pub const TAIL_WINDOW: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMode {
    FreeExponent,
    /// Slope pinned to the given value (typically `−1/α`).
    FixedExponent(f64),
}

impl FitMode {
    pub fn name(&self) -> &'static str {
        match self {
            FitMode::FreeExponent => "free_exponent",
            FitMode::FixedExponent(_) => "fixed_exponent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub beta: f64,
    pub exponent: f64,
    /// Root mean square of `log U − log(β t^p)` over the window.
    pub residual_error: f64,
    pub fit_window: (f64, f64),
    pub mode: FitMode,
    pub n_points: usize,
}

impl DecayFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.beta * t.powf(self.exponent)
    }

    pub fn summary(&self) -> String {
        format!(
            "power-law fit U(t) ~ beta * t^p ({})\n  window    = [{}, {}] ({} points)\n  beta      = {:.6}\n  exponent  = {:.6}\n  log-space RMS residual = {:.6}\n",
            self.mode.name(),
            self.fit_window.0,
            self.fit_window.1,
            self.n_points,
            self.beta,
            self.exponent,
            self.residual_error
        )
    }
}

fn window_points(series: &[(f64, f64)], window: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid(
            "fit_window",
            format!("({lo}, {hi}) needs 0 < lo < hi"),
        ));
    }
    let tol = 1e-9 * hi;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= lo - tol && t <= hi + tol)
        .collect();
    if let Some(&(t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(invalid(
            "series",
            format!("value {v} at t = {t} is not positive"),
        ));
    }
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in window ({lo}, {hi}); at least {MIN_FIT_POINTS} required",
            pts.len()
        )));
    }
    Ok(pts)
}

/// Least squares of `log U` on `log t` over `window`.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64), mode: FitMode) -> Result<DecayFit> {
    let pts = window_points(series, window)?;
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let exponent = match mode {
        FitMode::FreeExponent => {
            let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
            let sxy: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - x_mean) * (y - y_mean))
                .sum();
            if sxx == 0.0 {
                return Err(Error::InsufficientData("all fit times coincide".into()));
            }
            sxy / sxx
        }
        FitMode::FixedExponent(p) => p,
    };
    let log_beta = y_mean - exponent * x_mean;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - log_beta - exponent * x).powi(2))
        .sum();
    Ok(DecayFit {
        beta: log_beta.exp(),
        exponent,
        residual_error: (rss / n).sqrt(),
        fit_window: window,
        mode,
        n_points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogRow {
    pub log_t: f64,
    pub log_value: f64,
    pub log_fit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub t: f64,
    pub value: f64,
    pub fit_value: f64,
    pub abs_residual: f64,
    pub log_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLogExport {
    pub rows: Vec<LogLogRow>,
    pub tail: Vec<TailRow>,
    pub tail_window: (f64, f64),
}

impl LogLogExport {
    /// Smallest and largest absolute residual in the tail window.
    pub fn tail_residual_range(&self) -> Option<(f64, f64)> {
        let mut it = self.tail.iter().map(|r| r.abs_residual);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r))))
    }
}

/// Log-log table of all points with `t > 0`, plus the tail sub-table.
pub fn loglog_export(series: &[(f64, f64)], fit: &DecayFit) -> Result<LogLogExport> {
    let mut rows = Vec::new();
    let mut tail = Vec::new();
    let (lo, hi) = TAIL_WINDOW;
    for &(t, v) in series.iter().filter(|(t, _)| *t > 0.0) {
        if !(v > 0.0) {
            return Err(invalid(
                "series",
                format!("value {v} at t = {t} is not positive"),
            ));
        }
        let log_fit = fit.beta.ln() + fit.exponent * t.ln();
        rows.push(LogLogRow {
            log_t: t.ln(),
            log_value: v.ln(),
            log_fit,
        });
        if t >= lo - 1e-12 && t <= hi + 1e-12 {
            let fit_value = fit.predict(t);
            tail.push(TailRow {
                t,
                value: v,
                fit_value,
                abs_residual: (v - fit_value).abs(),
                log_residual: v.ln() - log_fit,
            });
        }
    }
    Ok(LogLogExport {
        rows,
        tail,
        tail_window: TAIL_WINDOW,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCi {
    /// Exponent fitted to the mean of all replicates.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

impl BootstrapCi {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn mean_series(
    replicates: &[Vec<(f64, f64)>],
    pick: impl Iterator<Item = usize>,
) -> Vec<(f64, f64)> {
    let mut sum: Vec<(f64, f64)> = replicates[0].iter().map(|&(t, _)| (t, 0.0)).collect();
    let mut count = 0.0;
    for r in pick {
        for (s, &(_, v)) in sum.iter_mut().zip(&replicates[r]) {
            s.1 += v;
        }
        count += 1.0;
    }
    sum.iter().map(|&(t, v)| (t, v / count)).collect()
}

/// Percentile bootstrap interval for the free exponent: replicates are drawn
/// with replacement, averaged pointwise and refitted.
pub fn bootstrap_exponent_ci<R: Rng + ?Sized>(
    replicates: &[Vec<(f64, f64)>],
    window: (f64, f64),
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapCi> {
    if replicates.len() < MIN_REPLICATES {
        return Err(Error::InsufficientData(format!(
            "{} replicates; at least {MIN_REPLICATES} required",
            replicates.len()
        )));
    }
    if resamples < 2 {
        return Err(invalid(
            "resamples",
            "need at least two bootstrap resamples",
        ));
    }
    let times: Vec<f64> = replicates[0].iter().map(|p| p.0).collect();
    if replicates
        .iter()
        .any(|r| r.len() != times.len() || r.iter().zip(&times).any(|(p, t)| p.0 != *t))
    {
        return Err(Error::GridMismatch(
            "replicates use different time grids".into(),
        ));
    }
    let k = replicates.len();
    let point = fit_power_law(
        &mean_series(replicates, 0..k),
        window,
        FitMode::FreeExponent,
    )?
    .exponent;
    let mut exps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let picks: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
        let fit = fit_power_law(
            &mean_series(replicates, picks.into_iter()),
            window,
            FitMode::FreeExponent,
        )?;
        exps.push(fit.exponent);
    }
    exps.sort_by(f64::total_cmp);
    let level = 0.95;
    let q = |p: f64| {
        let pos = p * (exps.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < exps.len() {
            exps[i] * (1.0 - frac) + exps[i + 1] * frac
        } else {
            exps[i]
        }
    };
    Ok(BootstrapCi {
        point,
        lower: q((1.0 - level) / 2.0),
        upper: q((1.0 + level) / 2.0),
        level,
        resamples,
    })
}
