//! Increments of the isotropic α-stable Lévy process and of its truncated
//! version obtained by rejecting increments that leave the unit ball.
//!
//! Stable laws use the S1 parametrisation. The positive (α/2)-stable
//! subordinator at unit scale has Laplace transform
//! `E[exp(-λS)] = exp(-λ^{α/2} / cos(πα/4))`, so the subordinated vector
//! `sqrt(S)·G` with `G ~ N(0, I_m)` has characteristic function
//! `exp(-γ |ξ|^α)` with `γ = 2^{-α/2} / cos(πα/4)`. Increments over a step
//! `dt` are scaled by `dt^{1/α}`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::levy_measure::surface_area;

pub const DEFAULT_MAX_REJECTS: usize = 1000;

/// A reproducible random stream: ChaCha12 keyed by `master_seed`, with
/// `stream_index` selecting one of 2^64 independent keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// How the unit-scale stable increments are rescaled before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleConvention {
    /// Unit-scale S1 subordinated increments, rescaled only by `dt^{1/α}`.
    #[default]
    UnitS1,
    /// Extra constant factor making the Lévy density on the unit ball equal to
    /// `|S^{m-2}|^{-1} |z|^{-m-α}`, so that the averaged generator is the
    /// truncated operator with unit intensity.
    MatchedToOperator,
}

impl ScaleConvention {
    pub fn name(self) -> &'static str {
        match self {
            ScaleConvention::UnitS1 => "unit-s1",
            ScaleConvention::MatchedToOperator => "matched",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unit-s1" | "unit" | "s1" => Ok(ScaleConvention::UnitS1),
            "matched" | "matched-to-operator" => Ok(ScaleConvention::MatchedToOperator),
            other => Err(Error::Parse(format!("unknown scale convention `{other}`"))),
        }
    }
}

/// Parameters of the driving noise and the constant velocity field σ ∈ ℝ^m.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    alpha: f64,
    sigma: Vec<f64>,
    theta: f64,
    jump_cutoff: f64,
    max_rejects: usize,
    scale: ScaleConvention,
}

impl NoiseConfig {
    /// The jump dimension `m` is `sigma.len()`.
    pub fn new(alpha: f64, sigma: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("{alpha} is not in (0, 2)")));
        }
        if sigma.is_empty() {
            return Err(invalid("sigma", "jump dimension m must be at least 1"));
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(invalid("sigma", "components must be finite"));
        }
        let theta = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
        Ok(Self {
            alpha,
            sigma,
            theta,
            jump_cutoff: 1.0,
            max_rejects: DEFAULT_MAX_REJECTS,
            scale: ScaleConvention::default(),
        })
    }

    pub fn with_jump_cutoff(mut self, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(invalid("jump_cutoff", format!("{cutoff} must be positive")));
        }
        self.jump_cutoff = cutoff;
        Ok(self)
    }

    pub fn with_max_rejects(mut self, max_rejects: usize) -> Result<Self> {
        if max_rejects == 0 {
            return Err(invalid("max_rejects", "must be positive"));
        }
        self.max_rejects = max_rejects;
        Ok(self)
    }

    pub fn with_scale(mut self, scale: ScaleConvention) -> Self {
        self.scale = scale;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Euclidean norm of σ.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn jump_cutoff(&self) -> f64 {
        self.jump_cutoff
    }

    pub fn max_rejects(&self) -> usize {
        self.max_rejects
    }

    pub fn scale(&self) -> ScaleConvention {
        self.scale
    }

    /// Multiplier applied to unit-scale increments on top of `dt^{1/α}`.
    pub fn increment_scale(&self) -> f64 {
        match self.scale {
            ScaleConvention::UnitS1 => 1.0,
            ScaleConvention::MatchedToOperator => {
                let target = matched_density_constant(self.m());
                (target / unit_levy_density_constant(self.alpha, self.m())).powf(1.0 / self.alpha)
            }
        }
    }

    /// Constant κ of the Lévy density `κ |z|^{-m-α}` of the sampled process.
    pub fn levy_density_constant(&self) -> f64 {
        unit_levy_density_constant(self.alpha, self.m()) * self.increment_scale().powf(self.alpha)
    }

    /// Factor multiplying the truncated operator so that it is the generator of
    /// `x ↦ E f(x + σ·Z_t)` for the sampled (truncated) process.
    ///
    /// Projecting `κ 1_{|z|≤1} |z|^{-m-α} dz` on a coordinate gives
    /// `κ |S^{m-2}| c(y) |y|^{-1-α} dy`; for `m = 1` the projection is the
    /// identity and `c ≡ 1`.
    pub fn operator_intensity(&self) -> f64 {
        let kappa = self.levy_density_constant();
        if self.m() >= 2 {
            kappa * surface_area(self.m() - 2)
        } else {
            kappa
        }
    }
}

/// Lévy density constant of `sqrt(S)·G` with unit-scale S1 subordinator `S`.
///
/// The isotropic law with characteristic exponent `|ξ|^α` has Lévy density
/// `C_{m,α} |z|^{-m-α}` with
/// `C_{m,α} = α 2^{α-1} Γ((m+α)/2) / (π^{m/2} Γ(1-α/2))`; subordination adds
/// the factor `2^{-α/2} / cos(πα/4)`.
pub fn unit_levy_density_constant(alpha: f64, m: usize) -> f64 {
    let mf = m as f64;
    let c_ma = alpha * 2f64.powf(alpha - 1.0) * gamma((mf + alpha) / 2.0)
        / (PI.powf(mf / 2.0) * gamma(1.0 - alpha / 2.0));
    c_ma * 2f64.powf(-alpha / 2.0) / (PI * alpha / 4.0).cos()
}

fn matched_density_constant(m: usize) -> f64 {
    if m >= 2 {
        1.0 / surface_area(m - 2)
    } else {
        1.0
    }
}

/// One draw of a totally skewed positive stable variable of index
/// `alpha_half ∈ (0, 1)`, unit S1 scale, by the Chambers–Mallows–Stuck
/// transform. Its Laplace transform is `exp(-λ^a / cos(πa/2))`.
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha_half: f64, rng: &mut R) -> Result<f64> {
    if !(alpha_half > 0.0 && alpha_half < 1.0) {
        return Err(invalid(
            "alpha_half",
            format!("{alpha_half} is not in (0, 1)"),
        ));
    }
    Ok(positive_stable_unchecked(alpha_half, rng))
}

#[inline]
fn open_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return PI * (u - 0.5);
        }
    }
}

#[inline]
fn positive_stable_unchecked<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let v = open_angle(rng);
    let w: f64 = Exp1.sample(rng);
    let shifted = a * (v + FRAC_PI_2);
    let scale = (1.0 / (PI * a / 2.0).cos()).powf(1.0 / a);
    scale * shifted.sin() / v.cos().powf(1.0 / a) * ((v - shifted).cos() / w).powf((1.0 - a) / a)
}

/// Symmetric one-dimensional stable draw with characteristic function
/// `exp(-|t|^α)` (CMS with β = 0; `tan V` at α = 1).
pub fn sample_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(invalid("alpha", format!("{alpha} is not in (0, 2]")));
    }
    let v = open_angle(rng);
    if alpha == 1.0 {
        return Ok(v.tan());
    }
    let w: f64 = Exp1.sample(rng);
    Ok((alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha))
}

/// Writes one untruncated isotropic increment over `dt` into `out`
/// (`out.len() == cfg.m()`).
#[inline]
fn isotropic_into<R: Rng + ?Sized>(
    cfg: &NoiseConfig,
    step_scale: f64,
    rng: &mut R,
    out: &mut [f64],
) {
    let s = positive_stable_unchecked(cfg.alpha / 2.0, rng);
    let radius = step_scale * s.sqrt();
    for o in out.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *o = radius * g;
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("{dt} must be positive and finite")));
    }
    Ok(())
}

/// One increment of the untruncated isotropic α-stable process over `dt`,
/// generated by Gaussian subordination.
pub fn sample_isotropic_stable<R: Rng + ?Sized>(
    cfg: &NoiseConfig,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let mut out = vec![0.0; cfg.m()];
    isotropic_into(cfg, step_scale(cfg, dt), rng, &mut out);
    Ok(out)
}

fn step_scale(cfg: &NoiseConfig, dt: f64) -> f64 {
    cfg.increment_scale() * dt.powf(1.0 / cfg.alpha)
}

/// An accepted truncated increment and the number of draws rejected before it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDraw {
    pub increment: Vec<f64>,
    pub rejections: usize,
}

fn truncated_into<R: Rng + ?Sized>(
    cfg: &NoiseConfig,
    dt: f64,
    step_scale: f64,
    max_rejects: usize,
    rng: &mut R,
    out: &mut [f64],
) -> Result<usize> {
    let cutoff_sq = cfg.jump_cutoff * cfg.jump_cutoff;
    for attempt in 0..max_rejects {
        isotropic_into(cfg, step_scale, rng, out);
        let norm_sq: f64 = out.iter().map(|v| v * v).sum();
        if norm_sq <= cutoff_sq {
            return Ok(attempt);
        }
    }
    Err(Error::RejectionSaturated {
        max_rejects,
        dt,
        cutoff: cfg.jump_cutoff,
    })
}

/// Draws isotropic increments over `dt` until one has Euclidean norm at most
/// `cfg.jump_cutoff()`.
pub fn sample_truncated_increment<R: Rng + ?Sized>(
    cfg: &NoiseConfig,
    dt: f64,
    rng: &mut R,
    max_rejects: usize,
) -> Result<TruncatedDraw> {
    check_dt(dt)?;
    if max_rejects == 0 {
        return Err(invalid("max_rejects", "must be positive"));
    }
    let mut increment = vec![0.0; cfg.m()];
    let rejections = truncated_into(
        cfg,
        dt,
        step_scale(cfg, dt),
        max_rejects,
        rng,
        &mut increment,
    )?;
    Ok(TruncatedDraw {
        increment,
        rejections,
    })
}

/// Step layout `0, dt, 2dt, …, t_max`, the last step possibly shortened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStepping {
    pub t_max: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeStepping {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(invalid("t_max", format!("{t_max} must be positive")));
        }
        if dt > t_max * (1.0 + 1e-12) {
            return Err(invalid("dt", format!("dt = {dt} exceeds t_max = {t_max}")));
        }
        let ratio = t_max / dt;
        let nearest = ratio.round();
        let n_steps = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        };
        Ok(Self {
            t_max,
            dt,
            n_steps: n_steps.max(1),
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t_max
        } else {
            k as f64 * self.dt
        }
    }

    pub fn step_length(&self, k: usize) -> f64 {
        self.time(k) - self.time(k - 1)
    }

    /// Index of the grid time equal to `t` (within a relative 1e-9), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.t_max.max(1.0);
        if t < -tol || t > self.t_max + tol {
            return None;
        }
        let k = ((t / self.dt).round() as usize).min(self.n_steps);
        [k.saturating_sub(1), k, (k + 1).min(self.n_steps)]
            .into_iter()
            .find(|&j| (self.time(j) - t).abs() <= tol)
    }
}

/// Streams a truncated Lévy path step by step without storing it.
pub(crate) struct PathStepper<'a> {
    cfg: &'a NoiseConfig,
    stepping: TimeStepping,
    uniform_scale: f64,
    pub(crate) position: Vec<f64>,
    increment: Vec<f64>,
    pub(crate) rejections: usize,
}

impl<'a> PathStepper<'a> {
    pub(crate) fn new(cfg: &'a NoiseConfig, stepping: TimeStepping) -> Self {
        Self {
            cfg,
            stepping,
            uniform_scale: step_scale(cfg, stepping.dt),
            position: vec![0.0; cfg.m()],
            increment: vec![0.0; cfg.m()],
            rejections: 0,
        }
    }

    /// Advances to step `k` (1-based) and returns the increment taken.
    pub(crate) fn advance<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<&[f64]> {
        let h = self.stepping.step_length(k);
        let scale = if k < self.stepping.n_steps {
            self.uniform_scale
        } else {
            step_scale(self.cfg, h)
        };
        self.rejections += truncated_into(
            self.cfg,
            h,
            scale,
            self.cfg.max_rejects,
            rng,
            &mut self.increment,
        )?;
        for (p, d) in self.position.iter_mut().zip(&self.increment) {
            *p += d;
        }
        Ok(&self.increment)
    }
}

/// A sampled trajectory of the truncated process, stored row-major with
/// stride `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyPath {
    m: usize,
    times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
    rejections: usize,
}

impl LevyPath {
    /// Builds a path from explicit increments (the first row must be zero).
    pub fn from_increments(times: Vec<f64>, m: usize, increments: Vec<f64>) -> Result<Self> {
        if m == 0 || increments.len() != times.len() * m {
            return Err(invalid("increments", "length must equal times.len() * m"));
        }
        if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times", "must start at 0 and increase strictly"));
        }
        if increments[..m].iter().any(|&v| v != 0.0) {
            return Err(invalid("increments", "the increment at t = 0 must be zero"));
        }
        let mut cumulative = vec![0.0; increments.len()];
        for k in 1..times.len() {
            for j in 0..m {
                cumulative[k * m + j] = cumulative[(k - 1) * m + j] + increments[k * m + j];
            }
        }
        Ok(Self {
            m,
            times,
            increments,
            cumulative,
            rejections: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.m..(k + 1) * self.m]
    }

    pub fn cumulative(&self, k: usize) -> &[f64] {
        &self.cumulative[k * self.m..(k + 1) * self.m]
    }

    /// Total number of rejected draws while sampling the path.
    pub fn rejections(&self) -> usize {
        self.rejections
    }

    /// Index of the path time equal to `t` (relative tolerance 1e-9).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let t_max = *self.times.last()?;
        let tol = 1e-9 * t_max.max(1.0);
        let pos = self.times.partition_point(|&s| s < t - tol);
        (pos < self.times.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }
}

/// Samples a truncated path on `0, dt, …, t_max`.
pub fn simulate_path<R: Rng + ?Sized>(
    cfg: &NoiseConfig,
    t_max: f64,
    dt: f64,
    rng: &mut R,
) -> Result<LevyPath> {
    let stepping = TimeStepping::new(t_max, dt)?;
    let m = cfg.m();
    let n = stepping.n_steps;
    let mut times = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity((n + 1) * m);
    let mut cumulative = Vec::with_capacity((n + 1) * m);
    times.push(0.0);
    increments.extend(std::iter::repeat_n(0.0, m));
    cumulative.extend(std::iter::repeat_n(0.0, m));
    let mut stepper = PathStepper::new(cfg, stepping);
    for k in 1..=n {
        let inc = stepper.advance(k, rng)?;
        increments.extend_from_slice(inc);
        cumulative.extend_from_slice(&stepper.position);
        times.push(stepping.time(k));
    }
    Ok(LevyPath {
        m,
        times,
        increments,
        cumulative,
        rejections: stepper.rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use statrs::stats_tests::ks_test::{ks_twosample, KSTwoSampleAlternativeMethod};
    use statrs::stats_tests::NaNPolicy;

    fn cfg(alpha: f64, sigma: Vec<f64>) -> NoiseConfig {
        NoiseConfig::new(alpha, sigma).unwrap()
    }

    fn ks_p(a: Vec<f64>, b: Vec<f64>) -> f64 {
        ks_twosample(
            a,
            b,
            KSTwoSampleAlternativeMethod::TwoSidedAsymptotic,
            NaNPolicy::Error,
        )
        .unwrap()
        .1
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig::new(0.0, vec![1.0]).is_err());
        assert!(NoiseConfig::new(2.0, vec![1.0]).is_err());
        assert!(NoiseConfig::new(1.5, vec![]).is_err());
        assert!(cfg(1.5, vec![1.0]).with_jump_cutoff(0.0).is_err());
        let c = cfg(1.5, vec![0.3, 0.4]);
        assert_eq!(c.m(), 2);
        assert!((c.theta() - 0.5).abs() < 1e-16);
    }

    #[test]
    fn rng_stream_is_reproducible_and_streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn positive_stable_rejects_bad_index() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_positive_stable(0.0, &mut rng).is_err());
        assert!(sample_positive_stable(1.0, &mut rng).is_err());
    }

    #[test]
    fn positive_stable_is_positive() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100_000 {
            assert!(sample_positive_stable(0.5, &mut rng).unwrap() > 0.0);
        }
    }

    #[test]
    fn positive_stable_deterministic_per_stream() {
        let a = sample_positive_stable(0.75, &mut RngStream::new(99, 5)).unwrap();
        let b = sample_positive_stable(0.75, &mut RngStream::new(99, 5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn positive_stable_laplace_transform_matches_closed_form() {
        let a = 0.5;
        let n = 1_000_000;
        let lambdas: [f64; 3] = [0.25, 1.0, 4.0];
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut rng = RngStream::new(2024, 1);
        for _ in 0..n {
            let s = sample_positive_stable(a, &mut rng).unwrap();
            for (i, l) in lambdas.iter().enumerate() {
                let e = (-l * s).exp();
                sums[i] += e;
                sq[i] += e * e;
            }
        }
        let c = 1.0 / (PI * a / 2.0).cos();
        for (i, l) in lambdas.iter().enumerate() {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            let exact = (-c * l.powf(a)).exp();
            assert!(
                (mean - exact).abs() < 3.0 * se,
                "λ={l}: {mean} vs {exact} (se {se})"
            );
        }
    }

    #[test]
    fn isotropic_direction_is_uniform_on_circle() {
        let c = cfg(1.5, vec![1.0, 0.0]);
        let mut rng = RngStream::new(5, 0);
        let bins = 36;
        let mut counts = vec![0usize; bins];
        let n = 100_000;
        for _ in 0..n {
            let z = sample_isotropic_stable(&c, 1.0, &mut rng).unwrap();
            let angle = z[1].atan2(z[0]) + PI;
            let b = ((angle / (2.0 * PI)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        let p = ChiSquared::new((bins - 1) as f64).unwrap().sf(chi2);
        assert!(p > 0.001, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn isotropic_rotation_invariance() {
        let c = cfg(1.2, vec![1.0, 0.0, 0.0]);
        let n = 100_000;
        let mut rng = RngStream::new(6, 0);
        let (ca, sa) = (0.7f64.cos(), 0.7f64.sin());
        let mut first = Vec::with_capacity(n);
        let mut rotated = Vec::with_capacity(n);
        for _ in 0..n {
            let z = sample_isotropic_stable(&c, 1.0, &mut rng).unwrap();
            first.push(z[0]);
        }
        for _ in 0..n {
            let z = sample_isotropic_stable(&c, 1.0, &mut rng).unwrap();
            rotated.push(ca * z[0] - sa * z[2]);
        }
        let p = ks_p(first, rotated);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn isotropic_self_similarity() {
        let c = cfg(1.5, vec![0.5, 0.0]);
        let n = 100_000;
        let mut rng = RngStream::new(8, 0);
        let radius = |z: Vec<f64>| z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = 2f64.powf(1.0 / 1.5);
        let at_two: Vec<f64> = (0..n)
            .map(|_| radius(sample_isotropic_stable(&c, 2.0, &mut rng).unwrap()))
            .collect();
        let at_one: Vec<f64> = (0..n)
            .map(|_| factor * radius(sample_isotropic_stable(&c, 1.0, &mut rng).unwrap()))
            .collect();
        let p = ks_p(at_two, at_one);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn one_dimensional_alpha_one_is_standard_cauchy() {
        let c = cfg(1.0, vec![1.0]);
        let n = 100_000;
        let mut rng = RngStream::new(9, 0);
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_isotropic_stable(&c, 1.0, &mut rng).unwrap()[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let median = 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
        // Median standard error of a standard Cauchy: π / (2 sqrt(n)).
        let se = PI / (2.0 * (n as f64).sqrt());
        assert!(median.abs() < 3.0 * se, "median {median}");
        // Quartiles of the standard Cauchy are ±1.
        let q1 = xs[n / 4];
        let q3 = xs[3 * n / 4];
        assert!(
            (q1 + 1.0).abs() < 0.03 && (q3 - 1.0).abs() < 0.03,
            "{q1} {q3}"
        );

        let reference: Vec<f64> = (0..n)
            .map(|_| sample_symmetric_stable(1.0, &mut rng).unwrap())
            .collect();
        assert!(ks_p(xs, reference) > 0.001);
    }

    #[test]
    fn one_dimensional_subordination_matches_direct_symmetric_sampler() {
        let alpha = 1.3;
        let c = cfg(alpha, vec![1.0]);
        let gamma_scale = (2f64.powf(-alpha / 2.0) / (PI * alpha / 4.0).cos()).powf(1.0 / alpha);
        let n = 100_000;
        let mut rng = RngStream::new(10, 0);
        let sub: Vec<f64> = (0..n)
            .map(|_| sample_isotropic_stable(&c, 1.0, &mut rng).unwrap()[0])
            .collect();
        let direct: Vec<f64> = (0..n)
            .map(|_| gamma_scale * sample_symmetric_stable(alpha, &mut rng).unwrap())
            .collect();
        assert!(ks_p(sub, direct) > 0.001);
    }

    #[test]
    fn tail_mass_matches_levy_density_constant() {
        // For large r, P(|X_1| > r) ≈ ν(|z| > r) = κ |S^{m-1}| r^{-α} / α.
        let alpha = 1.5;
        let c = cfg(alpha, vec![1.0, 0.0]);
        let kappa = c.levy_density_constant();
        let r: f64 = 30.0;
        let n = 2_000_000;
        let mut rng = RngStream::new(12, 0);
        let mut hits = 0usize;
        for _ in 0..n {
            let z = sample_isotropic_stable(&c, 1.0, &mut rng).unwrap();
            if z[0] * z[0] + z[1] * z[1] > r * r {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let predicted = kappa * surface_area(1) * r.powf(-alpha) / alpha;
        // Next-order corrections are O(r^{-2α}) relative to the leading term.
        assert!(
            (p - predicted).abs() < 4.0 * se + 0.02 * predicted,
            "{p} vs {predicted}"
        );
    }

    #[test]
    fn matched_scale_gives_unit_intensity() {
        for m in [1usize, 2, 3, 5, 10] {
            for alpha in [0.5, 1.0, 1.5] {
                let c = cfg(alpha, vec![0.1; m]).with_scale(ScaleConvention::MatchedToOperator);
                assert!(
                    (c.operator_intensity() - 1.0).abs() < 1e-12,
                    "m={m} α={alpha}"
                );
            }
        }
    }

    #[test]
    fn truncated_increment_respects_cutoff() {
        let c = cfg(0.8, vec![1.0, 1.0]);
        let mut rng = RngStream::new(13, 0);
        for _ in 0..20_000 {
            let d = sample_truncated_increment(&c, 0.5, &mut rng, DEFAULT_MAX_REJECTS).unwrap();
            let norm = d.increment.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0);
        }
    }

    #[test]
    fn acceptance_rate_at_fine_step() {
        let c = cfg(1.5, vec![0.5, 0.0]);
        let mut rng = RngStream::new(14, 0);
        let n = 100_000;
        let rejected: usize = (0..n)
            .map(|_| {
                sample_truncated_increment(&c, 1e-4, &mut rng, DEFAULT_MAX_REJECTS)
                    .unwrap()
                    .rejections
            })
            .sum();
        let acceptance = n as f64 / (n + rejected) as f64;
        assert!(acceptance >= 0.99, "{acceptance}");
    }

    #[test]
    fn huge_step_saturates_rejection() {
        let c = cfg(1.5, vec![0.5, 0.0]);
        let mut rng = RngStream::new(15, 0);
        let err = sample_truncated_increment(&c, 1e6, &mut rng, 100).unwrap_err();
        assert!(matches!(
            err,
            Error::RejectionSaturated {
                max_rejects: 100,
                ..
            }
        ));
    }

    #[test]
    fn path_grid_matches_requested_range() {
        let c = cfg(1.5, vec![0.5, 0.0]);
        let path = simulate_path(&c, 2.0, 1e-4, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(path.len(), 20_001);
        assert_eq!(path.times()[20_000], 2.0);
        assert_eq!(path.time_index(0.5), Some(5000));
        assert_eq!(path.time_index(1.5), Some(15_000));
    }

    #[test]
    fn single_step_path() {
        let c = cfg(1.5, vec![0.5, 0.2]);
        let path = simulate_path(&c, 0.3, 0.3, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path.cumulative(1), path.increment(1));
        assert!(path.cumulative(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shortened_last_step() {
        let s = TimeStepping::new(1.0, 0.3).unwrap();
        assert_eq!(s.n_steps, 4);
        assert!((s.step_length(4) - 0.1).abs() < 1e-15);
        assert_eq!(s.time(4), 1.0);
    }

    #[test]
    fn path_cumulative_consistency_and_determinism() {
        let c = cfg(1.1, vec![0.3, -0.2, 0.1]);
        let a = simulate_path(&c, 1.0, 1e-3, &mut RngStream::new(3, 17)).unwrap();
        let b = simulate_path(&c, 1.0, 1e-3, &mut RngStream::new(3, 17)).unwrap();
        assert_eq!(a, b);
        for k in 1..a.len() {
            for j in 0..3 {
                let diff = a.cumulative(k)[j] - a.cumulative(k - 1)[j];
                let scale = a.cumulative(k)[j].abs().max(a.cumulative(k - 1)[j].abs());
                assert!((diff - a.increment(k)[j]).abs() <= 4.0 * f64::EPSILON * scale.max(1e-300));
            }
            let norm: f64 = a.increment(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= c.jump_cutoff());
        }
    }

    #[test]
    fn uniform_angle_never_hits_endpoints() {
        let mut rng = RngStream::new(0, 0);
        for _ in 0..10_000 {
            let v = open_angle(&mut rng);
            assert!(v > -FRAC_PI_2 && v < FRAC_PI_2);
        }
    }
}
