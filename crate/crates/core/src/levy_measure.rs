//! Projections of the isotropic stable Lévy measure onto one coordinate.
//!
//! For `ν = |z|^{-m-α} dz` on ℝ^m the image under `z ↦ z₁` has density
//! `|S^{m-2}| c(y) / |y|^{1+α}` where the weight
//!
//! ```text
//! c(y) = ∫_0^{R(y)} (1 + r²)^{-(m+α)/2} r^{m-2} dr
//! ```
//!
//! has `R = ∞` for the full measure and `R = sqrt(1 - y²)/|y|` when `ν` is
//! restricted to the closed unit ball. The lowercase `c` (without the sphere
//! factor) is the canonical weight used by the operators; callers that need
//! the uppercase constant multiply by [`surface_area`]`(m - 2)`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quadrature::integrate_adaptive;

/// Absolute tolerance of the radial quadratures.
pub const RADIAL_TOLERANCE: f64 = 1e-10;
const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureParams {
    pub alpha: f64,
    pub m: usize,
}

impl MeasureParams {
    pub fn new(alpha: f64, m: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("{alpha} is not in (0, 2)")));
        }
        if m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        Ok(Self { alpha, m })
    }

    fn require_projection(&self) -> Result<()> {
        if self.m < 2 {
            return Err(invalid(
                "m",
                "the projection constants need m >= 2; for m = 1 the projected measure is the measure itself",
            ));
        }
        Ok(())
    }
}

/// Surface area of the unit sphere `S^k ⊂ ℝ^{k+1}`: `2 π^{(k+1)/2} / Γ((k+1)/2)`.
pub fn surface_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// `∫_0^upper (1+r²)^{-(m+α)/2} r^{m-2} dr` after the substitution
/// `r = s/(1-s)`, which maps `[0, ∞]` onto `[0, 1]`.
fn radial_integral_to(p: &MeasureParams, upper: f64) -> Result<f64> {
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let s_max = if upper.is_infinite() {
        1.0
    } else {
        upper / (1.0 + upper)
    };
    let power = -(p.m as f64 + p.alpha) / 2.0;
    let k = (p.m - 2) as i32;
    let integrand = |s: f64| {
        let r = s / (1.0 - s);
        let jac = (1.0 + r) * (1.0 + r);
        jac * r.powi(k) * (1.0 + r * r).powf(power)
    };
    Ok(integrate_adaptive(integrand, 0.0, s_max, RADIAL_TOLERANCE, MAX_SEGMENTS)?.value)
}

/// The complete radial integral `c(0) = ∫_0^∞ (1+r²)^{-(m+α)/2} r^{m-2} dr`.
pub fn radial_integral(p: &MeasureParams) -> Result<f64> {
    p.require_projection()?;
    radial_integral_to(p, f64::INFINITY)
}

/// `C(m, α) = |S^{m-2}| ∫_0^∞ (1+r²)^{-(m+α)/2} r^{m-2} dr`.
pub fn c_constant(p: &MeasureParams) -> Result<f64> {
    let radial = radial_integral(p)?;
    Ok(surface_area(p.m - 2) * radial)
}

/// The weight `c(y, m, α)` of the unit-ball restricted projection, without
/// the sphere factor. Zero for `|y| ≥ 1`.
pub fn c_weight(y: f64, p: &MeasureParams) -> Result<f64> {
    p.require_projection()?;
    if y == 0.0 {
        return Err(invalid(
            "y",
            "c(0) has an infinite upper limit; use radial_integral for the y -> 0 limit",
        ));
    }
    let a = y.abs();
    if a >= 1.0 {
        return Ok(0.0);
    }
    radial_integral_to(p, (1.0 - a * a).sqrt() / a)
}

/// Tabulated weights `c(y)` at fixed nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub y_nodes: Vec<f64>,
    pub c_values: Vec<f64>,
    pub m: usize,
    pub alpha: f64,
    pub tolerance: f64,
}

pub fn build_weight_table(p: &MeasureParams, y_nodes: &[f64]) -> Result<WeightTable> {
    p.require_projection()?;
    if let Some(&bad) = y_nodes.iter().find(|y| !(y.abs() < 1.0) || **y == 0.0) {
        return Err(invalid(
            "y_nodes",
            format!("node {bad} is not in (-1, 1) \\ {{0}}"),
        ));
    }
    let c_values = y_nodes
        .iter()
        .map(|&y| c_weight(y, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightTable {
        y_nodes: y_nodes.to_vec(),
        c_values,
        m: p.m,
        alpha: p.alpha,
        tolerance: RADIAL_TOLERANCE,
    })
}

impl WeightTable {
    pub fn params(&self) -> MeasureParams {
        MeasureParams {
            alpha: self.alpha,
            m: self.m,
        }
    }

    /// CSV with a `# key = value` header and columns `y,c_value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# m = {}", self.m)?;
        writeln!(out, "# alpha = {}", self.alpha)?;
        writeln!(out, "# tolerance = {}", self.tolerance)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "c_value"])?;
        for (y, c) in self.y_nodes.iter().zip(&self.c_values) {
            w.write_record([y.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (meta, table) = crate::io::read_commented_csv(input)?;
        Ok(Self {
            y_nodes: table.f64_column("y")?,
            c_values: table.f64_column("c_value")?,
            m: meta.require("m")?,
            alpha: meta.require("alpha")?,
            tolerance: meta.require("tolerance")?,
        })
    }
}

/// Goodness-of-fit of the sampled first coordinate against the projected
/// density of the annulus-restricted measure.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub params: MeasureParams,
    pub r_min: f64,
    pub n_samples: usize,
    /// Bin edges after merging sparse bins.
    pub edges: Vec<f64>,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub mean_z1: f64,
    pub mean_z1_stderr: f64,
}

pub const DEFAULT_PROJECTION_BINS: usize = 50;
pub const MIN_PROJECTION_SAMPLES: usize = 10_000;

/// Samples `z` from the normalised restriction of `|z|^{-m-α} dz` to the
/// annulus `r_min ≤ |z| ≤ 1`, projects on `z₁` and runs a chi-square test
/// against bin probabilities obtained by two-dimensional quadrature of the
/// same restricted measure.
pub fn validate_projection<R: Rng + ?Sized>(
    p: &MeasureParams,
    r_min: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ProjectionReport> {
    if !(r_min > 0.0 && r_min < 1.0) {
        return Err(invalid("r_min", format!("{r_min} is not in (0, 1)")));
    }
    if n_samples < MIN_PROJECTION_SAMPLES {
        return Err(invalid(
            "n_samples",
            format!("{n_samples} < {MIN_PROJECTION_SAMPLES} samples"),
        ));
    }
    let bins = DEFAULT_PROJECTION_BINS;
    let width = 2.0 / bins as f64;
    let raw_edges: Vec<f64> = (0..=bins).map(|i| -1.0 + i as f64 * width).collect();

    let mut counts = vec![0u64; bins];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut direction = vec![0.0; p.m];
    let a = p.alpha;
    let lo_pow = r_min.powf(-a);
    for _ in 0..n_samples {
        let u: f64 = rng.random();
        let r = (lo_pow - u * (lo_pow - 1.0)).powf(-1.0 / a);
        let z1 = if p.m == 1 {
            if rng.random::<bool>() {
                r
            } else {
                -r
            }
        } else {
            let mut norm_sq = 0.0;
            for d in direction.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *d = g;
                norm_sq += g * g;
            }
            r * direction[0] / norm_sq.sqrt()
        };
        sum += z1;
        sum_sq += z1 * z1;
        let b = (((z1 + 1.0) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = n_samples as f64;
    let mean_z1 = sum / n;
    let var = (sum_sq / n - mean_z1 * mean_z1) * n / (n - 1.0);
    let mean_z1_stderr = (var / n).sqrt();

    let total_mass = projected_total_mass(p, r_min);
    let probabilities = raw_edges
        .windows(2)
        .map(|w| Ok(projected_bin_mass(p, r_min, w[0], w[1])? / total_mass))
        .collect::<Result<Vec<_>>>()?;
    let expected_raw: Vec<f64> = probabilities.iter().map(|q| q * n).collect();

    let (edges, observed, expected) = merge_sparse_bins(&raw_edges, &counts, &expected_raw, 5.0);
    let chi_square: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let degrees_of_freedom = observed.len() - 1;
    let p_value = ChiSquared::new(degrees_of_freedom as f64)
        .map_err(|e| Error::InsufficientData(e.to_string()))?
        .sf(chi_square);

    Ok(ProjectionReport {
        params: *p,
        r_min,
        n_samples,
        edges,
        observed,
        expected,
        chi_square,
        degrees_of_freedom,
        p_value,
        mean_z1,
        mean_z1_stderr,
    })
}

/// Mass of `1_{r_min ≤ |z| ≤ 1} |z|^{-m-α} dz`: `|S^{m-1}| (r_min^{-α} - 1)/α`.
fn projected_total_mass(p: &MeasureParams, r_min: f64) -> f64 {
    surface_area(p.m - 1) * (r_min.powf(-p.alpha) - 1.0) / p.alpha
}

/// Projected density of the annulus-restricted measure at `y`:
/// `|S^{m-2}| ∫ ρ^{m-2} (y² + ρ²)^{-(m+α)/2} dρ` over the ρ-range with
/// `r_min² ≤ y² + ρ² ≤ 1`.
fn projected_density(p: &MeasureParams, r_min: f64, y: f64) -> Result<f64> {
    let y2 = y * y;
    if y2 > 1.0 {
        return Ok(0.0);
    }
    if p.m == 1 {
        return Ok(if y2 >= r_min * r_min {
            y.abs().powf(-1.0 - p.alpha)
        } else {
            0.0
        });
    }
    let rho_lo = (r_min * r_min - y2).max(0.0).sqrt();
    let rho_hi = (1.0 - y2).sqrt();
    let power = -(p.m as f64 + p.alpha) / 2.0;
    let k = (p.m - 2) as i32;
    let inner = integrate_adaptive(
        |rho| rho.powi(k) * (y2 + rho * rho).powf(power),
        rho_lo,
        rho_hi,
        1e-11,
        MAX_SEGMENTS,
    )?;
    Ok(surface_area(p.m - 2) * inner.value)
}

fn projected_bin_mass(p: &MeasureParams, r_min: f64, lo: f64, hi: f64) -> Result<f64> {
    let mut failure = None;
    let outer = integrate_adaptive(
        |y| match projected_density(p, r_min, y) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        1e-9,
        MAX_SEGMENTS,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(outer.value),
    }
}

/// Greedily merges adjacent bins until every expected count reaches `min_expected`.
fn merge_sparse_bins(
    edges: &[f64],
    observed: &[u64],
    expected: &[f64],
    min_expected: f64,
) -> (Vec<f64>, Vec<u64>, Vec<f64>) {
    let mut out_edges = vec![edges[0]];
    let mut out_obs = Vec::new();
    let mut out_exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0u64, 0.0);
    for i in 0..observed.len() {
        o_acc += observed[i];
        e_acc += expected[i];
        if e_acc >= min_expected {
            out_edges.push(edges[i + 1]);
            out_obs.push(o_acc);
            out_exp.push(e_acc);
            o_acc = 0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0 {
        match (out_obs.last_mut(), out_exp.last_mut()) {
            (Some(o), Some(e)) => {
                *o += o_acc;
                *e += e_acc;
                *out_edges.last_mut().unwrap() = *edges.last().unwrap();
            }
            _ => {
                out_edges.push(*edges.last().unwrap());
                out_obs.push(o_acc);
                out_exp.push(e_acc);
            }
        }
    }
    (out_edges, out_obs, out_exp)
}
