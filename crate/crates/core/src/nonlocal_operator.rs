//! Compensated nonlocal operators in one dimension and explicit time stepping
//! of the averaged equation `∂ₜU = I·𝓛U`.
//!
//! Three kinds are provided:
//!
//! * `FullLine`: `∫_ℝ (f(x+θy) − f(x) − f'(x)θy) / |y|^{1+α} dy`
//! * `Truncated`: `∫_{−1}^{1} c(y) (f(x+θy) − f(x) − f'(x)θy) / |y|^{1+α} dy`
//!   with the projected weight `c` of [`crate::levy_measure::c_weight`]
//! * `FractionalLaplacian`: `∫_ℝ (f(x+y) − f(x) − f'(x)y 1_{|y|<1}) / |y|^{1+α} dy`
//!
//! Every kind is multiplied by an intensity `I` (1 unless set).
//!
//! The kernel exponent is `1 + α`, so in Fourier variables the full-line
//! kind is `−K_α θ^α |ξ|^α` with `K_α = π / (Γ(1+α) sin(πα/2))`; this is the
//! operator commonly written `−(−Δ)^{α/2}` up to that constant.
//!
//! ## Quadrature
//!
//! On `|y| ≤ ε` the integrand is replaced by its Taylor expansion through
//! fourth order, integrated in closed form against the small-`y` expansion
//! `c(y) ≈ c(0) − |y|^{1+α}/(1+α)` of the weight. On `ε < |y| ≤ 1` and
//! `1 < |y| ≤ Y` the symmetric difference `f(x+θy) + f(x−θy) − 2f(x)` is
//! integrated by composite Gauss–Legendre on panels that are geometric near
//! `ε`, graded towards `|y| = 1` and at most `max_panel_width/θ` wide where
//! the input is resolved. Beyond `Y` the input is continued affinely from
//! `x ± θY`, which is exact for compactly supported and affine inputs.
//!
//! For the fractional Laplacian, [`apply_operator`] uses an independent
//! route: adaptive Gauss–Kronrod on `(ε, 1)` and one-sided adaptive
//! integrals over `|y| > 1` after the substitution `y = s^{−1/α}`.

use std::f64::consts::PI;

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::levy_measure::{build_weight_table, radial_integral, MeasureParams, WeightTable};
use crate::quadrature::{composite_gauss_legendre, integrate_adaptive};
use crate::stable_noise::NoiseConfig;
use crate::transport_sim::{InitialCondition, ScalarField, SpaceTimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    FullLine,
    Truncated,
    FractionalLaplacian,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::FullLine => "full_line",
            OperatorKind::Truncated => "truncated",
            OperatorKind::FractionalLaplacian => "fractional_laplacian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureParams {
    /// Radius of the Taylor-regularised region.
    pub epsilon: f64,
    pub nodes_per_panel: usize,
    /// Geometric panels per octave between `ε` and `1/2`.
    pub panels_per_octave: usize,
    /// Largest panel, measured in `x` (so `max_panel_width/θ` in `y`).
    pub max_panel_width: f64,
    /// Distance in `x` up to which the panel width cap applies.
    pub resolved_reach: f64,
    /// Far cutoff `Y` beyond which the affine continuation is used.
    pub far_cutoff: f64,
    /// Graded breakpoints `1 − 2^{−j−1}`, `j = 1..=boundary_grading`.
    pub boundary_grading: usize,
}

impl Default for QuadratureParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            nodes_per_panel: 8,
            panels_per_octave: 8,
            max_panel_width: 0.0125,
            resolved_reach: 3.0,
            far_cutoff: 1e3,
            boundary_grading: 20,
        }
    }
}

impl QuadratureParams {
    /// Half the Taylor radius and twice the nodes per panel.
    pub fn refined(&self) -> Self {
        Self {
            epsilon: self.epsilon / 2.0,
            nodes_per_panel: self.nodes_per_panel * 2,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(invalid(
                "epsilon",
                format!("{} is not in (0, 0.5)", self.epsilon),
            ));
        }
        if self.nodes_per_panel == 0 || self.panels_per_octave == 0 {
            return Err(invalid("nodes_per_panel", "panel counts must be positive"));
        }
        if !(self.max_panel_width > 0.0 && self.resolved_reach >= 0.0) {
            return Err(invalid("max_panel_width", "must be positive"));
        }
        if !(self.far_cutoff > 1.0 && self.far_cutoff.is_finite()) {
            return Err(invalid(
                "far_cutoff",
                format!("{} must exceed 1", self.far_cutoff),
            ));
        }
        Ok(())
    }
}

/// Precomputed symmetric-pair rule
/// `a₂f''(x) + a₄f''''(x) + Σ wⱼ (f(x+oⱼ) + f(x−oⱼ) − 2f(x)) + tail`.
#[derive(Debug, Clone, PartialEq)]
struct PairRule {
    a2: f64,
    a4: f64,
    offsets: Vec<f64>,
    weights: Vec<f64>,
    /// Entries `[0, mid_len)` lie in `ε < |y| ≤ 1`, the rest in `1 < |y| ≤ Y`.
    mid_len: usize,
    tail: Option<Tail>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tail {
    offset: f64,
    value_coeff: f64,
    slope_coeff: f64,
}

/// A fully specified operator together with its quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    kind: OperatorKind,
    alpha: f64,
    m: usize,
    theta: f64,
    intensity: f64,
    quadrature: QuadratureParams,
    weight_table: Option<WeightTable>,
    alignment: Option<f64>,
    rule: PairRule,
}

impl OperatorSpec {
    pub fn new(
        kind: OperatorKind,
        alpha: f64,
        m: usize,
        theta: f64,
        quadrature: QuadratureParams,
    ) -> Result<Self> {
        Self::build(kind, alpha, m, theta, 1.0, quadrature, None)
    }

    pub fn full_line(alpha: f64, theta: f64) -> Result<Self> {
        Self::new(
            OperatorKind::FullLine,
            alpha,
            1,
            theta,
            QuadratureParams::default(),
        )
    }

    pub fn truncated(alpha: f64, m: usize, theta: f64) -> Result<Self> {
        Self::new(
            OperatorKind::Truncated,
            alpha,
            m,
            theta,
            QuadratureParams::default(),
        )
    }

    pub fn fractional_laplacian(alpha: f64) -> Result<Self> {
        Self::new(
            OperatorKind::FractionalLaplacian,
            alpha,
            1,
            1.0,
            QuadratureParams::default(),
        )
    }

    /// The truncated operator scaled to be the generator of the averaged
    /// dynamics driven by `cfg`.
    pub fn for_noise(cfg: &NoiseConfig, quadrature: QuadratureParams) -> Result<Self> {
        Self::build(
            OperatorKind::Truncated,
            cfg.alpha(),
            cfg.m(),
            cfg.theta(),
            cfg.operator_intensity(),
            quadrature,
            None,
        )
    }

    pub fn with_intensity(&self, intensity: f64) -> Result<Self> {
        Self::build(
            self.kind,
            self.alpha,
            self.m,
            self.theta,
            intensity,
            self.quadrature,
            self.alignment,
        )
    }

    pub fn with_quadrature(&self, quadrature: QuadratureParams) -> Result<Self> {
        Self::build(
            self.kind,
            self.alpha,
            self.m,
            self.theta,
            self.intensity,
            quadrature,
            self.alignment,
        )
    }

    /// Rebuilds the rule with breakpoints at every multiple of `dx/θ`, so that
    /// each panel sees a single cubic piece of a grid interpolant.
    pub fn aligned_to(&self, dx: f64) -> Result<Self> {
        Self::build(
            self.kind,
            self.alpha,
            self.m,
            self.theta,
            self.intensity,
            self.quadrature,
            Some(dx),
        )
    }

    fn build(
        kind: OperatorKind,
        alpha: f64,
        m: usize,
        theta: f64,
        intensity: f64,
        quadrature: QuadratureParams,
        alignment: Option<f64>,
    ) -> Result<Self> {
        let params = MeasureParams::new(alpha, m)?;
        quadrature.validate()?;
        let theta = if kind == OperatorKind::FractionalLaplacian {
            1.0
        } else {
            theta
        };
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid("theta", format!("{theta} must be nonnegative")));
        }
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(invalid(
                "intensity",
                format!("{intensity} must be nonnegative"),
            ));
        }
        if let Some(dx) = alignment {
            if !(dx > 0.0) {
                return Err(invalid("dx", "alignment spacing must be positive"));
            }
        }
        let projected = kind == OperatorKind::Truncated && m >= 2;
        let (rule, weight_table) = build_rule(
            &params,
            kind,
            projected,
            theta,
            intensity,
            &quadrature,
            alignment,
        )?;
        Ok(Self {
            kind,
            alpha,
            m,
            theta,
            intensity,
            quadrature,
            weight_table,
            alignment,
            rule,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn quadrature(&self) -> &QuadratureParams {
        &self.quadrature
    }

    /// Weights `c(y)` at the positive mid-region nodes (truncated kind, `m ≥ 2`).
    pub fn weight_table(&self) -> Option<&WeightTable> {
        self.weight_table.as_ref()
    }

    pub fn rule_size(&self) -> usize {
        self.rule.offsets.len()
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    v
}

/// Splits every panel wider than `cap(midpoint)`.
fn cap_panels(breaks: &[f64], cap: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let limit = cap(0.5 * (a + b));
        let pieces = if limit.is_finite() && b - a > limit {
            ((b - a) / limit).ceil() as usize
        } else {
            1
        };
        for p in 1..=pieces {
            out.push(if p == pieces {
                b
            } else {
                a + (b - a) * p as f64 / pieces as f64
            });
        }
    }
    out
}

fn geometric(lo: f64, hi: f64, per_octave: usize) -> Vec<f64> {
    let n = ((hi / lo).log2() * per_octave as f64).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| lo * (hi / lo).powf(i as f64 / n as f64))
        .collect()
}

fn mid_breakpoints(q: &QuadratureParams, theta: f64, alignment: Option<f64>) -> Vec<f64> {
    let eps = q.epsilon;
    let mut breaks = if eps < 0.5 {
        geometric(eps, 0.5, q.panels_per_octave)
    } else {
        vec![eps]
    };
    for j in 1..=q.boundary_grading {
        breaks.push(1.0 - 0.5 * 2f64.powi(-(j as i32)));
    }
    breaks.push(1.0);
    if let Some(dx) = alignment {
        let h = dx / theta;
        let mut k = (eps / h).floor() as usize + 1;
        while (k as f64) * h < 1.0 {
            breaks.push(k as f64 * h);
            k += 1;
        }
    }
    let breaks = sorted_unique(breaks);
    let cap = q.max_panel_width / theta;
    let reach = q.resolved_reach / theta;
    cap_panels(&breaks, |y| if y <= reach { cap } else { f64::INFINITY })
}

fn far_breakpoints(q: &QuadratureParams, theta: f64, alignment: Option<f64>) -> Vec<f64> {
    let y_far = q.far_cutoff;
    let reach = (q.resolved_reach / theta).clamp(1.0, y_far);
    let mut breaks = vec![1.0, reach];
    breaks.extend(geometric(reach, y_far, 4 * q.panels_per_octave));
    if let Some(dx) = alignment {
        let h = dx / theta;
        let mut k = (1.0 / h).floor() as usize + 1;
        while (k as f64) * h < reach {
            breaks.push(k as f64 * h);
            k += 1;
        }
    }
    let breaks = sorted_unique(breaks);
    let cap = q.max_panel_width / theta;
    cap_panels(&breaks, |y| if y <= reach { cap } else { f64::INFINITY })
}

fn panel_nodes(breaks: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    composite_gauss_legendre(breaks, n)
}

fn build_rule(
    params: &MeasureParams,
    kind: OperatorKind,
    projected: bool,
    theta: f64,
    intensity: f64,
    q: &QuadratureParams,
    alignment: Option<f64>,
) -> Result<(PairRule, Option<WeightTable>)> {
    let alpha = params.alpha;
    if theta == 0.0 || intensity == 0.0 {
        let empty = PairRule {
            a2: 0.0,
            a4: 0.0,
            offsets: Vec::new(),
            weights: Vec::new(),
            mid_len: 0,
            tail: None,
        };
        return Ok((empty, None));
    }
    let eps = q.epsilon;
    let c0 = if projected {
        radial_integral(params)?
    } else {
        1.0
    };
    let corr = if projected { 1.0 / (1.0 + alpha) } else { 0.0 };
    let a2 = intensity
        * theta.powi(2)
        * (c0 * eps.powf(2.0 - alpha) / (2.0 - alpha) - corr * eps.powi(3) / 3.0);
    let a4 = intensity * theta.powi(4) / 12.0
        * (c0 * eps.powf(4.0 - alpha) / (4.0 - alpha) - corr * eps.powi(5) / 5.0);

    let (mid_y, mid_w) = panel_nodes(&mid_breakpoints(q, theta, alignment), q.nodes_per_panel);
    let table = if projected {
        Some(build_weight_table(params, &mid_y)?)
    } else {
        None
    };
    let mut offsets = Vec::with_capacity(mid_y.len());
    let mut weights = Vec::with_capacity(mid_y.len());
    for (i, (&y, &w)) in mid_y.iter().zip(&mid_w).enumerate() {
        let c = table.as_ref().map_or(1.0, |t| t.c_values[i]);
        offsets.push(theta * y);
        weights.push(intensity * w * c * y.powf(-1.0 - alpha));
    }
    let mid_len = offsets.len();

    let tail = if kind == OperatorKind::Truncated {
        None
    } else {
        let (far_y, far_w) = panel_nodes(&far_breakpoints(q, theta, alignment), q.nodes_per_panel);
        for (&y, &w) in far_y.iter().zip(&far_w) {
            offsets.push(theta * y);
            weights.push(intensity * w * y.powf(-1.0 - alpha));
        }
        let y_far = q.far_cutoff;
        let slope_coeff = if alpha > 1.0 {
            intensity
                * theta
                * (y_far.powf(1.0 - alpha) / (alpha - 1.0) - y_far.powf(1.0 - alpha) / alpha)
        } else {
            0.0
        };
        Some(Tail {
            offset: theta * y_far,
            value_coeff: intensity * y_far.powf(-alpha) / alpha,
            slope_coeff,
        })
    };
    Ok((
        PairRule {
            a2,
            a4,
            offsets,
            weights,
            mid_len,
            tail,
        },
        table,
    ))
}

/// A function with the derivatives and differences needed by the operators.
///
/// Implementors with closed-form differences (polynomials) may override
/// [`SmoothFunction::difference`] and [`SmoothFunction::second_difference`]
/// to avoid cancellation.
pub trait SmoothFunction: Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    fn d4(&self, x: f64) -> f64;

    /// `f(x + o) − f(x)`.
    fn difference(&self, x: f64, o: f64) -> f64 {
        self.value(x + o) - self.value(x)
    }

    /// `f(x + o) + f(x − o) − 2f(x)`.
    fn second_difference(&self, x: f64, o: f64) -> f64 {
        self.value(x + o) + self.value(x - o) - 2.0 * self.value(x)
    }
}

/// `[f, f', f'', f''', f'''']` of `amplitude·exp(−r²/(r² − (x−c)²))`.
pub fn bump_derivatives(x: f64, center: f64, radius: f64, amplitude: f64) -> [f64; 5] {
    let a = radius * radius;
    let d = x - center;
    let dd = a - d * d;
    if dd <= 0.0 {
        return [0.0; 5];
    }
    let f = amplitude * (-a / dd).exp();
    let g1 = -2.0 * a * d / dd.powi(2);
    let g2 = -2.0 * a / dd.powi(2) - 8.0 * a * d * d / dd.powi(3);
    let g3 = -24.0 * a * d / dd.powi(3) - 48.0 * a * d.powi(3) / dd.powi(4);
    let g4 = -24.0 * a / dd.powi(3)
        - 288.0 * a * d * d / dd.powi(4)
        - 384.0 * a * d.powi(4) / dd.powi(5);
    [
        f,
        g1 * f,
        (g2 + g1 * g1) * f,
        (g3 + 3.0 * g1 * g2 + g1.powi(3)) * f,
        (g4 + 4.0 * g1 * g3 + 3.0 * g2 * g2 + 6.0 * g1 * g1 * g2 + g1.powi(4)) * f,
    ]
}

/// Analytic inputs for operator checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `exp(−x²/(2w²))`.
    Gaussian {
        width: f64,
    },
    Bump {
        center: f64,
        radius: f64,
        amplitude: f64,
    },
    /// `sin(ωx)` times a bump of the given radius normalised to 1 at 0.
    WindowedSin {
        frequency: f64,
        radius: f64,
    },
    Affine {
        a: f64,
        b: f64,
    },
    /// `a·x²`.
    Quadratic {
        a: f64,
    },
}

impl TestFunction {
    /// The smooth battery used for cross-checks between operator kinds.
    pub fn battery() -> [TestFunction; 3] {
        [
            TestFunction::Gaussian { width: 0.2 },
            TestFunction::Bump {
                center: 0.0,
                radius: 0.1,
                amplitude: 1.0,
            },
            TestFunction::WindowedSin {
                frequency: 3.0,
                radius: 1.2,
            },
        ]
    }

    fn derivatives(&self, x: f64) -> [f64; 5] {
        match *self {
            TestFunction::Gaussian { width } => {
                let u = x / width;
                let f = (-0.5 * u * u).exp();
                let s = width;
                [
                    f,
                    -u / s * f,
                    (u * u - 1.0) / (s * s) * f,
                    -(u.powi(3) - 3.0 * u) / s.powi(3) * f,
                    (u.powi(4) - 6.0 * u * u + 3.0) / s.powi(4) * f,
                ]
            }
            TestFunction::Bump {
                center,
                radius,
                amplitude,
            } => bump_derivatives(x, center, radius, amplitude),
            TestFunction::WindowedSin { frequency, radius } => {
                let w = bump_derivatives(x, 0.0, radius, 1f64.exp());
                let (sn, cs) = (frequency * x).sin_cos();
                let k = frequency;
                let s = [sn, k * cs, -k * k * sn, -k.powi(3) * cs, k.powi(4) * sn];
                [
                    s[0] * w[0],
                    s[1] * w[0] + s[0] * w[1],
                    s[2] * w[0] + 2.0 * s[1] * w[1] + s[0] * w[2],
                    s[3] * w[0] + 3.0 * s[2] * w[1] + 3.0 * s[1] * w[2] + s[0] * w[3],
                    s[4] * w[0]
                        + 4.0 * s[3] * w[1]
                        + 6.0 * s[2] * w[2]
                        + 4.0 * s[1] * w[3]
                        + s[0] * w[4],
                ]
            }
            TestFunction::Affine { a, b } => [a + b * x, b, 0.0, 0.0, 0.0],
            TestFunction::Quadratic { a } => [a * x * x, 2.0 * a * x, 2.0 * a, 0.0, 0.0],
        }
    }
}

impl SmoothFunction for TestFunction {
    fn value(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Affine { a, b } => a + b * x,
            _ => self.derivatives(x)[0],
        }
    }

    fn d1(&self, x: f64) -> f64 {
        self.derivatives(x)[1]
    }

    fn d2(&self, x: f64) -> f64 {
        self.derivatives(x)[2]
    }

    fn d4(&self, x: f64) -> f64 {
        self.derivatives(x)[4]
    }

    fn difference(&self, x: f64, o: f64) -> f64 {
        match *self {
            TestFunction::Affine { b, .. } => b * o,
            TestFunction::Quadratic { a } => a * o * (2.0 * x + o),
            _ => self.value(x + o) - self.value(x),
        }
    }

    fn second_difference(&self, x: f64, o: f64) -> f64 {
        match *self {
            TestFunction::Affine { .. } => 0.0,
            TestFunction::Quadratic { a } => 2.0 * a * o * o,
            _ => self.value(x + o) + self.value(x - o) - 2.0 * self.value(x),
        }
    }
}

impl SmoothFunction for InitialCondition {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn d1(&self, x: f64) -> f64 {
        ic_derivative(self, x, 1)
    }

    fn d2(&self, x: f64) -> f64 {
        ic_derivative(self, x, 2)
    }

    fn d4(&self, x: f64) -> f64 {
        ic_derivative(self, x, 4)
    }
}

fn ic_derivative(ic: &InitialCondition, x: f64, order: usize) -> f64 {
    match ic {
        InitialCondition::Bump {
            center,
            radius,
            amplitude,
        } => bump_derivatives(x, *center, *radius, *amplitude)[order],
        InitialCondition::Sum(parts) => parts.iter().map(|p| ic_derivative(p, x, order)).sum(),
    }
}

/// Grid values extended by zero, with cubic Lagrange interpolation between
/// nodes and centred differences for derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    x0: f64,
    dx: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(x0: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(invalid("dx", "must be positive"));
        }
        Ok(Self { x0, dx, values })
    }

    pub fn from_field(grid: &SpaceTimeGrid, field: &ScalarField) -> Result<Self> {
        if field.values.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                field.values.len(),
                grid.n_nodes()
            )));
        }
        Self::new(grid.x_min(), grid.dx(), field.values.clone())
    }

    fn node(&self, i: i64) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.values.get(i as usize).copied().unwrap_or(0.0)
        }
    }
}

/// Cubic Lagrange weights for nodes `j−1, j, j+1, j+2` at fraction `t ∈ [0, 1)`.
fn lagrange4(t: f64) -> [f64; 4] {
    let (a, b, c, d) = (t + 1.0, t, t - 1.0, t - 2.0);
    [
        -b * c * d / 6.0,
        a * c * d / 2.0,
        -a * b * d / 2.0,
        a * b * c / 6.0,
    ]
}

impl SmoothFunction for GridFunction {
    fn value(&self, x: f64) -> f64 {
        let pos = (x - self.x0) / self.dx;
        let j = pos.floor();
        let t = pos - j;
        let j = j as i64;
        if t == 0.0 {
            return self.node(j);
        }
        let w = lagrange4(t);
        w[0] * self.node(j - 1)
            + w[1] * self.node(j)
            + w[2] * self.node(j + 1)
            + w[3] * self.node(j + 2)
    }

    fn d1(&self, x: f64) -> f64 {
        let h = self.dx;
        (self.value(x + h) - self.value(x - h)) / (2.0 * h)
    }

    fn d2(&self, x: f64) -> f64 {
        let h = self.dx;
        (self.value(x + h) - 2.0 * self.value(x) + self.value(x - h)) / (h * h)
    }

    fn d4(&self, x: f64) -> f64 {
        let h = self.dx;
        (self.value(x - 2.0 * h) - 4.0 * self.value(x - h) + 6.0 * self.value(x)
            - 4.0 * self.value(x + h)
            + self.value(x + 2.0 * h))
            / h.powi(4)
    }
}

fn finite(region: &'static str, x: f64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { region, x })
    }
}

fn apply_rule<F: SmoothFunction + ?Sized>(rule: &PairRule, f: &F, x: f64) -> Result<f64> {
    let near = if rule.a2 == 0.0 && rule.a4 == 0.0 {
        0.0
    } else {
        rule.a2 * f.d2(x) + rule.a4 * f.d4(x)
    };
    let near = finite("|y| <= epsilon", x, near)?;
    let pair = |o: f64| f.second_difference(x, o);
    let mid: f64 = rule.offsets[..rule.mid_len]
        .iter()
        .zip(&rule.weights[..rule.mid_len])
        .map(|(&o, &w)| w * pair(o))
        .sum();
    let mid = finite("epsilon < |y| <= 1", x, mid)?;
    let far: f64 = rule.offsets[rule.mid_len..]
        .iter()
        .zip(&rule.weights[rule.mid_len..])
        .map(|(&o, &w)| w * pair(o))
        .sum();
    let far = finite("1 < |y| <= far_cutoff", x, far)?;
    let tail = match rule.tail {
        Some(t) => {
            t.value_coeff * pair(t.offset)
                + t.slope_coeff * (f.d1(x + t.offset) - f.d1(x - t.offset))
        }
        None => 0.0,
    };
    let tail = finite("|y| > far_cutoff", x, tail)?;
    Ok(near + mid + far + tail)
}

const ADAPTIVE_TOLERANCE: f64 = 1e-12;
const ADAPTIVE_SEGMENTS: usize = 200_000;

fn apply_fractional_laplacian<F: SmoothFunction + ?Sized>(
    spec: &OperatorSpec,
    f: &F,
    x: f64,
) -> Result<f64> {
    let alpha = spec.alpha;
    let eps = spec.quadrature.epsilon;
    let near = f.d2(x) * eps.powf(2.0 - alpha) / (2.0 - alpha)
        + f.d4(x) / 12.0 * eps.powf(4.0 - alpha) / (4.0 - alpha);
    let near = finite("|y| <= epsilon", x, near)?;
    let mid = integrate_adaptive(
        |y| f.second_difference(x, y) * y.powf(-1.0 - alpha),
        eps,
        1.0,
        ADAPTIVE_TOLERANCE,
        ADAPTIVE_SEGMENTS,
    )?
    .value;
    let mid = finite("epsilon < |y| <= 1", x, mid)?;
    // ∫_1^∞ g(y) y^{-1-α} dy = (1/α) ∫_0^1 g(s^{-1/α}) ds with g the symmetric difference.
    let far = integrate_adaptive(
        |s: f64| {
            if s == 0.0 {
                return 0.0;
            }
            f.second_difference(x, s.powf(-1.0 / alpha))
        },
        0.0,
        1.0,
        ADAPTIVE_TOLERANCE,
        ADAPTIVE_SEGMENTS,
    )?
    .value
        / alpha;
    let far = finite("|y| > 1", x, far)?;
    Ok(spec.intensity * (near + mid + far))
}

/// Value of the operator applied to `f` at `x`.
pub fn apply_operator<F: SmoothFunction + ?Sized>(
    spec: &OperatorSpec,
    f: &F,
    x: f64,
) -> Result<f64> {
    match spec.kind {
        OperatorKind::FractionalLaplacian => apply_fractional_laplacian(spec, f, x),
        _ => apply_rule(&spec.rule, f, x),
    }
}

/// Result of comparing the full-line operator with the fractional Laplacian.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub alpha: f64,
    pub theta: f64,
    pub probes: Vec<f64>,
    /// `(function, max |𝓛_α f − (−Δ)f|)` over the probes.
    pub per_function: Vec<(TestFunction, f64)>,
    pub max_discrepancy: f64,
}

/// Fifty equally spaced probes on `[−0.5, 0.5]`.
pub fn consistency_probes() -> Vec<f64> {
    (0..50).map(|i| -0.5 + i as f64 / 49.0).collect()
}

/// Maximum discrepancy between the full-line operator at scale `θ` and the
/// fractional Laplacian on the smooth battery. The two agree for `θ = 1`
/// and `α > 1`, where `∫_{|y|>1} y/|y|^{1+α} dy = 0`.
pub fn operator_consistency_check(alpha: f64, theta: f64) -> Result<ConsistencyReport> {
    let full = OperatorSpec::full_line(alpha, theta)?;
    let frac = OperatorSpec::fractional_laplacian(alpha)?;
    let probes = consistency_probes();
    let mut per_function = Vec::new();
    for tf in TestFunction::battery() {
        let gaps = probes
            .par_iter()
            .map(|&x| Ok((apply_operator(&full, &tf, x)? - apply_operator(&frac, &tf, x)?).abs()))
            .collect::<Result<Vec<f64>>>()?;
        per_function.push((tf, gaps.into_iter().fold(0.0, f64::max)));
    }
    let max_discrepancy = per_function.iter().map(|(_, g)| *g).fold(0.0, f64::max);
    Ok(ConsistencyReport {
        alpha,
        theta,
        probes,
        per_function,
        max_discrepancy,
    })
}

/// Fourier constant `K_α = ∫_ℝ (1 − cos y)/|y|^{1+α} dy = π / (Γ(1+α) sin(πα/2))`.
pub fn fourier_constant(alpha: f64) -> f64 {
    PI / (gamma(1.0 + alpha) * (PI * alpha / 2.0).sin())
}

/// A translation-invariant stencil `(LU)ᵢ = Σₖ aₖ U_{i+k}` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    /// Coefficients for offsets `−half_width..=half_width`.
    pub coefficients: Vec<f64>,
    pub half_width: usize,
}

impl Stencil {
    pub fn coefficient(&self, k: i64) -> f64 {
        let idx = k + self.half_width as i64;
        if idx < 0 {
            0.0
        } else {
            self.coefficients.get(idx as usize).copied().unwrap_or(0.0)
        }
    }

    /// `Σₖ aₖ e^{ikξ}` at `ξ = π·j/samples`, `j = 0..=samples`; returns the
    /// largest modulus and the value at `ξ = π`.
    pub fn symbol_extremes(&self, samples: usize) -> (f64, f64) {
        let h = self.half_width as i64;
        let symbol = |xi: f64| -> f64 {
            (-h..=h)
                .map(|k| self.coefficient(k) * (k as f64 * xi).cos())
                .sum()
        };
        let max = (0..=samples)
            .map(|j| symbol(PI * j as f64 / samples as f64).abs())
            .fold(0.0, f64::max);
        (max, symbol(PI))
    }

    /// Applies the stencil with zero extension outside `values`.
    pub fn apply(&self, values: &[f64], out: &mut [f64]) {
        let n = values.len() as i64;
        let h = self.half_width as i64;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let i = i as i64;
            let lo = (-h).max(-i);
            let hi = h.min(n - 1 - i);
            let mut acc = 0.0;
            for k in lo..=hi {
                acc += self.coefficients[(k + h) as usize] * values[(i + k) as usize];
            }
            *o = acc;
        });
    }
}

/// Assembles the stencil of `spec` on spacing `dx` for a window of `n_nodes`
/// nodes: `aₖ = 𝓛[δₖ](0)` for the cubic interpolant of the unit vector `δₖ`.
pub fn assemble_stencil(spec: &OperatorSpec, dx: f64, n_nodes: usize) -> Result<Stencil> {
    let aligned = spec.aligned_to(dx)?;
    let rule = &aligned.rule;
    let max_offset = rule
        .offsets
        .iter()
        .copied()
        .chain(rule.tail.map(|t| t.offset))
        .fold(0.0, f64::max);
    let reach = ((max_offset / dx).ceil() as usize + 3).max(2);
    let half_width = reach.min(n_nodes.saturating_sub(1)).max(2);
    let h = half_width as i64;
    let mut coeffs = vec![0.0; 2 * half_width + 1];
    let mut add = |k: i64, v: f64| {
        if (-h..=h).contains(&k) {
            coeffs[(k + h) as usize] += v;
        }
    };
    // Interpolated point value f(o) = Σ_k ℓ_k(o) f_k.
    let add_point = |o: f64, w: f64, add: &mut dyn FnMut(i64, f64)| {
        let pos = o / dx;
        let j = pos.floor();
        let t = pos - j;
        let j = j as i64;
        if t == 0.0 {
            add(j, w);
        } else {
            let l = lagrange4(t);
            for (s, lw) in l.iter().enumerate() {
                add(j - 1 + s as i64, w * lw);
            }
        }
    };
    let h2 = dx * dx;
    add(-1, rule.a2 / h2);
    add(0, -2.0 * rule.a2 / h2);
    add(1, rule.a2 / h2);
    let h4 = h2 * h2;
    for (k, c) in [(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)] {
        add(k, c * rule.a4 / h4);
    }
    for (&o, &w) in rule.offsets.iter().zip(&rule.weights) {
        add_point(o, w, &mut add);
        add_point(-o, w, &mut add);
        add(0, -2.0 * w);
    }
    if let Some(t) = rule.tail {
        add_point(t.offset, t.value_coeff, &mut add);
        add_point(-t.offset, t.value_coeff, &mut add);
        add(0, -2.0 * t.value_coeff);
        let s = t.slope_coeff / (2.0 * dx);
        add_point(t.offset + dx, s, &mut add);
        add_point(t.offset - dx, -s, &mut add);
        add_point(-t.offset + dx, -s, &mut add);
        add_point(-t.offset - dx, s, &mut add);
    }
    // The operator is even; average out rounding asymmetry.
    for k in 1..=half_width {
        let avg = 0.5 * (coeffs[half_width + k] + coeffs[half_width - k]);
        coeffs[half_width + k] = avg;
        coeffs[half_width - k] = avg;
    }
    Ok(Stencil {
        coefficients: coeffs,
        half_width,
    })
}

/// Time stepping controls of [`evolve`], with the assembled stencil and its
/// stability bound.
#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub grid: SpaceTimeGrid,
    pub dt_pde: f64,
    pub stencil: Stencil,
    /// Largest modulus of the discrete symbol.
    pub worst_mode: f64,
    /// Symbol at the alternating grid mode `(−1)^i`.
    pub alternating_mode: f64,
    /// `0.5 / worst_mode`.
    pub stability_bound: f64,
}

pub const SYMBOL_SAMPLES: usize = 2048;

impl EvolutionConfig {
    /// Uses `dt_pde` if given, otherwise the stability bound itself; fails if
    /// the requested step exceeds the bound.
    pub fn new(spec: &OperatorSpec, grid: SpaceTimeGrid, dt_pde: Option<f64>) -> Result<Self> {
        let stencil = assemble_stencil(spec, grid.dx(), grid.n_nodes())?;
        let (worst_mode, alternating_mode) = stencil.symbol_extremes(SYMBOL_SAMPLES);
        let stability_bound = if worst_mode > 0.0 {
            0.5 / worst_mode
        } else {
            f64::INFINITY
        };
        let dt_pde = match dt_pde {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(invalid("dt_pde", format!("{dt} must be positive")));
                }
                if dt > stability_bound {
                    return Err(invalid(
                        "dt_pde",
                        format!("{dt} exceeds the stability bound {stability_bound:e}"),
                    ));
                }
                dt
            }
            None => stability_bound.min(grid.t_max()),
        };
        Ok(Self {
            grid,
            dt_pde,
            stencil,
            worst_mode,
            alternating_mode,
            stability_bound,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub fields: Vec<ScalarField>,
    pub steps: usize,
    /// Largest step actually taken.
    pub dt_used: f64,
}

/// Forward Euler `Uⁿ⁺¹ = Uⁿ + Δt·𝓛Uⁿ` on the grid with zero extension,
/// returning the configured snapshots. Between consecutive snapshots the step
/// is shortened uniformly so that snapshot times are hit exactly.
pub fn evolve(ic: &InitialCondition, cfg: &EvolutionConfig) -> Result<Evolution> {
    let grid = &cfg.grid;
    let mut u = ic.sample(grid, 0.0);
    let limit = 10.0 * u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut lu = vec![0.0; u.len()];
    let mut fields = Vec::with_capacity(grid.snapshot_times().len());
    let mut t = 0.0;
    let mut steps = 0;
    let mut dt_used: f64 = 0.0;
    for &target in grid.snapshot_times() {
        let span = target - t;
        if span > 0.0 {
            let n = (span / cfg.dt_pde * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            dt_used = dt_used.max(dt);
            for s in 1..=n {
                cfg.stencil.apply(&u, &mut lu);
                for (ui, li) in u.iter_mut().zip(&lu) {
                    *ui += dt * li;
                }
                steps += 1;
                let max_abs = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if !(max_abs <= limit) && limit > 0.0 {
                    return Err(Error::Unstable {
                        time: t + s as f64 * dt,
                        max_abs,
                        limit,
                        dt,
                        bound: cfg.stability_bound,
                    });
                }
            }
        }
        t = target;
        fields.push(ScalarField::new(target, u.clone())?);
    }
    Ok(Evolution {
        fields,
        steps,
        dt_used,
    })
}

/// One row of an MC-versus-PDE comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub time: f64,
    pub sup_discrepancy: f64,
    pub l2_discrepancy: f64,
    /// Root mean square of the standard error over nodes where it is nonzero.
    pub pooled_stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub allowance: f64,
    pub pass: bool,
}

/// Pooled standard error of a field: RMS over the nodes with nonzero error.
pub fn pooled_stderr(stderr: &ScalarField) -> f64 {
    let active: Vec<f64> = stderr.values.iter().copied().filter(|&s| s > 0.0).collect();
    if active.is_empty() {
        0.0
    } else {
        (active.iter().map(|s| s * s).sum::<f64>() / active.len() as f64).sqrt()
    }
}

/// Per-snapshot sup and L² discrepancies; a snapshot passes when its sup
/// discrepancy is at most `3·pooled + allowance`.
pub fn compare_mc_pde(
    mean_fields: &[ScalarField],
    pde_fields: &[ScalarField],
    stderr_fields: &[ScalarField],
    dx: f64,
    allowance: f64,
) -> Result<ComparisonReport> {
    if mean_fields.len() != pde_fields.len() || mean_fields.len() != stderr_fields.len() {
        return Err(Error::GridMismatch(format!(
            "{} mean, {} PDE and {} stderr snapshots",
            mean_fields.len(),
            pde_fields.len(),
            stderr_fields.len()
        )));
    }
    let mut rows = Vec::with_capacity(mean_fields.len());
    for ((mc, pde), se) in mean_fields.iter().zip(pde_fields).zip(stderr_fields) {
        if mc.time != pde.time || mc.time != se.time {
            return Err(Error::GridMismatch(format!(
                "snapshot times {} / {} / {} differ",
                mc.time, pde.time, se.time
            )));
        }
        if mc.values.len() != pde.values.len() || mc.values.len() != se.values.len() {
            return Err(Error::GridMismatch(format!(
                "at t = {}: {} MC nodes vs {} PDE nodes",
                mc.time,
                mc.values.len(),
                pde.values.len()
            )));
        }
        let diffs: Vec<f64> = mc
            .values
            .iter()
            .zip(&pde.values)
            .map(|(a, b)| a - b)
            .collect();
        let sup = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let l2 = (dx * diffs.iter().map(|d| d * d).sum::<f64>()).sqrt();
        let pooled = pooled_stderr(se);
        rows.push(ComparisonRow {
            time: mc.time,
            sup_discrepancy: sup,
            l2_discrepancy: l2,
            pooled_stderr: pooled,
            pass: sup <= 3.0 * pooled + allowance,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ComparisonReport {
        rows,
        allowance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_measure::c_weight;

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let h = 1e-5;
        for &x in &[-0.07, -0.02, 0.0, 0.031, 0.08] {
            let d = bump_derivatives(x, 0.0, 0.1, 1.0);
            let p = bump_derivatives(x + h, 0.0, 0.1, 1.0);
            let m = bump_derivatives(x - h, 0.0, 0.1, 1.0);
            for k in 0..4 {
                let fd = (p[k] - m[k]) / (2.0 * h);
                let scale = d[k + 1].abs().max(1.0);
                assert!(
                    (fd - d[k + 1]).abs() / scale < 1e-4,
                    "x={x} order {}: {fd} vs {}",
                    k + 1,
                    d[k + 1]
                );
            }
        }
    }

    #[test]
    fn windowed_sin_and_gaussian_derivatives_match_finite_differences() {
        let h = 1e-5;
        for tf in [
            TestFunction::Gaussian { width: 0.2 },
            TestFunction::battery()[2],
        ] {
            for &x in &[-0.6, -0.1, 0.25, 0.9] {
                let d = tf.derivatives(x);
                let p = tf.derivatives(x + h);
                let m = tf.derivatives(x - h);
                for k in 0..4 {
                    let fd = (p[k] - m[k]) / (2.0 * h);
                    assert!((fd - d[k + 1]).abs() / d[k + 1].abs().max(1.0) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn affine_inputs_are_annihilated() {
        let specs = [
            OperatorSpec::full_line(1.5, 0.5).unwrap(),
            OperatorSpec::full_line(0.7, 1.0).unwrap(),
            OperatorSpec::truncated(1.5, 2, 0.5).unwrap(),
            OperatorSpec::truncated(0.5, 5, 1.0).unwrap(),
            OperatorSpec::fractional_laplacian(1.5).unwrap(),
            OperatorSpec::fractional_laplacian(0.5).unwrap(),
        ];
        for spec in &specs {
            for (a, b) in [(1.0, 0.0), (0.3, -2.0), (-1.0, 0.7)] {
                let f = TestFunction::Affine { a, b };
                for x in [-0.9, 0.0, 0.37] {
                    let v = apply_operator(spec, &f, x).unwrap();
                    assert!(v.abs() <= 1e-12, "{:?} a={a} b={b} x={x}: {v}", spec.kind());
                }
            }
        }
    }

    #[test]
    fn quadratic_matches_weight_integral_oracle() {
        let (alpha, m, theta) = (1.5, 2usize, 0.5);
        let spec = OperatorSpec::truncated(alpha, m, theta).unwrap();
        let p = MeasureParams::new(alpha, m).unwrap();
        // Independent oracle: adaptive integral of c(y)·y^{1−α} on (0, 1).
        let oracle = integrate_adaptive(
            |y| {
                if y == 0.0 {
                    0.0
                } else {
                    c_weight(y, &p).unwrap() * y.powf(1.0 - alpha)
                }
            },
            0.0,
            1.0,
            1e-11,
            20_000,
        )
        .unwrap()
        .value;
        let expected = theta * theta * 2.0 * oracle;
        for x in [-0.5, 0.0, 0.8] {
            let v = apply_operator(&spec, &TestFunction::Quadratic { a: 1.0 }, x).unwrap();
            assert!((v - expected).abs() < 1e-8, "x={x}: {v} vs {expected}");
        }
    }

    #[test]
    fn operator_is_negative_at_bump_maximum() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.5).unwrap();
        let ic = InitialCondition::default();
        let v = apply_operator(&spec, &ic, 0.0).unwrap();
        assert!(v < 0.0);
        // Dense trapezoid oracle on symmetric pairs with the exact weight.
        let p = MeasureParams::new(1.5, 2).unwrap();
        let n = 200_000;
        let mut acc = 0.0;
        let f0 = ic.eval(0.0);
        let c0 = radial_integral(&p).unwrap();
        let eps: f64 = 1e-4;
        let taylor = ic.d2(0.0) * 0.25 * c0 * eps.powf(0.5) / 0.5;
        for i in 0..n {
            let y = eps + (1.0 - eps) * (i as f64 + 0.5) / n as f64;
            let c = c_weight(y, &p).unwrap();
            acc += c * (ic.eval(0.5 * y) + ic.eval(-0.5 * y) - 2.0 * f0) * y.powf(-2.5);
        }
        let oracle = taylor + acc * (1.0 - eps) / n as f64;
        assert!(oracle < 0.0);
        assert!((v - oracle).abs() < 1e-3 * oracle.abs(), "{v} vs {oracle}");
    }

    /// `(1/π) ∫_0^∞ cos(ξx) ξ^α ĝ(ξ) dξ` for the Gaussian of width `w`.
    fn gaussian_symbol_oracle(alpha: f64, w: f64, x: f64) -> f64 {
        let ghat = |xi: f64| w * (2.0 * PI).sqrt() * (-0.5 * (w * xi).powi(2)).exp();
        let r = integrate_adaptive(
            |xi| (xi * x).cos() * xi.powf(alpha) * ghat(xi),
            0.0,
            60.0 / w,
            1e-12,
            50_000,
        )
        .unwrap();
        r.value / PI
    }

    #[test]
    fn full_line_gaussian_matches_fourier_symbol() {
        let alpha = 1.5;
        let spec = OperatorSpec::full_line(alpha, 1.0).unwrap();
        let g = TestFunction::Gaussian { width: 0.2 };
        let k = fourier_constant(alpha);
        for x in [0.0, 0.13, -0.31, 0.5] {
            let exact = -k * gaussian_symbol_oracle(alpha, 0.2, x);
            let v = apply_operator(&spec, &g, x).unwrap();
            assert!((v - exact).abs() < 1e-6, "x={x}: {v} vs {exact}");
        }
    }

    #[test]
    fn full_line_scales_as_theta_to_alpha() {
        let g = TestFunction::Gaussian { width: 0.2 };
        let a = apply_operator(&OperatorSpec::full_line(1.2, 1.0).unwrap(), &g, 0.1).unwrap();
        let b = apply_operator(&OperatorSpec::full_line(1.2, 0.5).unwrap(), &g, 0.1).unwrap();
        assert!((b - 0.5f64.powf(1.2) * a).abs() < 1e-6 * a.abs());
    }

    #[test]
    fn translation_equivariance() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.5).unwrap();
        let dx = 1e-3;
        for k in [3i32, 50, -120] {
            let h = k as f64 * dx;
            let shifted = TestFunction::Bump {
                center: h,
                radius: 0.1,
                amplitude: 1.0,
            };
            let base = TestFunction::battery()[1];
            for x in [0.0, 0.04, -0.07] {
                let lhs = apply_operator(&spec, &shifted, x + h).unwrap();
                let rhs = apply_operator(&spec, &base, x).unwrap();
                assert!((lhs - rhs).abs() <= 1e-8, "h={h} x={x}");
            }
        }
    }

    #[test]
    fn quadrature_converges_under_refinement() {
        let specs = [
            OperatorSpec::truncated(1.5, 2, 0.5).unwrap(),
            OperatorSpec::truncated(0.8, 3, 1.0).unwrap(),
            OperatorSpec::full_line(1.5, 1.0).unwrap(),
        ];
        for spec in &specs {
            let fine = spec.with_quadrature(spec.quadrature().refined()).unwrap();
            for tf in TestFunction::battery() {
                for x in [-0.3, 0.0, 0.05, 0.2] {
                    let a = apply_operator(spec, &tf, x).unwrap();
                    let b = apply_operator(&fine, &tf, x).unwrap();
                    assert!(
                        (a - b).abs() <= 1e-6,
                        "{:?} {tf:?} x={x}: {a} vs {b}",
                        spec.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn full_line_and_fractional_laplacian_agree_at_unit_scale() {
        let report = operator_consistency_check(1.5, 1.0).unwrap();
        assert!(report.max_discrepancy <= 1e-6, "{report:?}");
        let gap = operator_consistency_check(1.5, 0.5).unwrap();
        assert!(gap.max_discrepancy > 1e-2);
    }

    #[test]
    fn zero_theta_operator_vanishes() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.0).unwrap();
        assert_eq!(
            apply_operator(&spec, &InitialCondition::default(), 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn grid_function_interpolates_cubics_exactly() {
        let dx = 0.01;
        let xs: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 * dx).collect();
        let cubic = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.25 * x.powi(3);
        let g = GridFunction::new(-1.0, dx, xs.iter().map(|&x| cubic(x)).collect()).unwrap();
        for x in [-0.503, 0.0017, 0.7777] {
            assert!((g.value(x) - cubic(x)).abs() < 1e-13);
        }
        assert_eq!(g.value(1.5), 0.0);
        assert!((g.d2(0.3) - (1.0 - 1.5 * 0.3)).abs() < 1e-9);
    }

    fn pde_grid(dx: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(-1.0, 1.0, dx, 0.5, 1e-3, vec![0.0, 0.25, 0.5]).unwrap()
    }

    #[test]
    fn stencil_matches_pointwise_application() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.5).unwrap();
        let grid = pde_grid(5e-3);
        let stencil = assemble_stencil(&spec, grid.dx(), grid.n_nodes()).unwrap();
        let aligned = spec.aligned_to(grid.dx()).unwrap();
        let ic = InitialCondition::default();
        let values = ic.sample(&grid, 0.0);
        let gf = GridFunction::new(grid.x_min(), grid.dx(), values.clone()).unwrap();
        let mut out = vec![0.0; values.len()];
        stencil.apply(&values, &mut out);
        for i in [150usize, 190, 200, 230] {
            let direct = apply_operator(&aligned, &gf, grid.x(i)).unwrap();
            assert!(
                (out[i] - direct).abs() < 1e-9 * direct.abs().max(1.0),
                "node {i}: {} vs {direct}",
                out[i]
            );
        }
        let total: f64 = stencil.coefficients.iter().sum();
        assert!(total.abs() < 1e-9 * stencil.coefficients[stencil.half_width].abs());
    }

    #[test]
    fn evolve_preserves_symmetry_and_mass_and_decays() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.5).unwrap();
        // Wide window so that the support stays far from the boundary.
        let grid = SpaceTimeGrid::new(-4.0, 4.0, 5e-3, 0.25, 1e-3, vec![0.0, 0.1, 0.25]).unwrap();
        let cfg = EvolutionConfig::new(&spec, grid.clone(), None).unwrap();
        assert!(cfg.stability_bound > 0.0 && cfg.alternating_mode < 0.0);
        let ic = InitialCondition::default();
        let out = evolve(&ic, &cfg).unwrap();
        let mass0: f64 = out.fields[0].values.iter().sum();
        let n = grid.n_nodes();
        let mut peak = f64::INFINITY;
        for f in &out.fields {
            let asym = (0..n)
                .map(|i| (f.values[i] - f.values[n - 1 - i]).abs())
                .fold(0.0, f64::max);
            assert!(asym <= 1e-10);
            let mass: f64 = f.values.iter().sum();
            assert!(((mass - mass0) / mass0).abs() <= 1e-6);
            let centre = f.values[n / 2];
            assert!(centre < peak);
            peak = centre;
        }
    }

    #[test]
    fn evolve_with_zero_theta_is_constant() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.0).unwrap();
        let grid = pde_grid(1e-2);
        let cfg = EvolutionConfig::new(&spec, grid, Some(1e-2)).unwrap();
        let out = evolve(&InitialCondition::default(), &cfg).unwrap();
        assert!(out.fields.iter().all(|f| f.values == out.fields[0].values));
    }

    #[test]
    fn evolution_rejects_steps_above_bound_and_detects_blow_up() {
        let spec = OperatorSpec::truncated(1.5, 2, 0.5).unwrap();
        let grid = pde_grid(5e-3);
        let cfg = EvolutionConfig::new(&spec, grid.clone(), None).unwrap();
        assert!(EvolutionConfig::new(&spec, grid, Some(2.0 * cfg.stability_bound)).is_err());
        let mut reckless = cfg.clone();
        reckless.dt_pde = 20.0 * cfg.stability_bound;
        let err = evolve(&InitialCondition::default(), &reckless).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn comparison_report_basics() {
        let a = ScalarField::new(0.0, vec![0.0, 1.0, 0.0]).unwrap();
        let se = ScalarField::new(0.0, vec![0.0, 0.0, 0.0]).unwrap();
        let rep = compare_mc_pde(&[a.clone()], &[a.clone()], &[se.clone()], 0.1, 0.0).unwrap();
        assert_eq!(rep.rows[0].sup_discrepancy, 0.0);
        assert!(rep.pass);
        let b = ScalarField::new(0.0, vec![0.0, 0.9, 0.0]).unwrap();
        let rep = compare_mc_pde(&[a.clone()], &[b], &[se.clone()], 0.1, 0.05).unwrap();
        assert!(!rep.pass);
        let short = ScalarField::new(0.0, vec![0.0]).unwrap();
        assert!(compare_mc_pde(&[a], &[short], &[se], 0.1, 0.0).is_err());
    }
}
