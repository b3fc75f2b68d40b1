//! Pathwise and Monte Carlo solutions of the transport equation
//! `du = σ·∇u ⋄ dZ` in one space dimension, solved by characteristics:
//! `u(t, x) = u₀(x + σ·Z_t)`.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::stable_noise::{LevyPath, NoiseConfig, PathStepper, RngStream, TimeStepping};

/// Paths per work unit in the Monte Carlo loop. Partial sums are merged in
/// chunk order, so results do not depend on how chunks are scheduled.
const MC_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    x_min: f64,
    x_max: f64,
    dx: f64,
    n_cells: usize,
    stepping: TimeStepping,
    snapshot_times: Vec<f64>,
    snapshot_steps: Vec<usize>,
}

impl SpaceTimeGrid {
    pub fn new(
        x_min: f64,
        x_max: f64,
        dx: f64,
        t_max: f64,
        dt: f64,
        snapshot_times: Vec<f64>,
    ) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(invalid(
                "x_min",
                format!("window [{x_min}, {x_max}] is empty"),
            ));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(invalid("dx", format!("{dx} must be positive")));
        }
        let ratio = (x_max - x_min) / dx;
        let n_cells = ratio.round();
        if n_cells < 1.0 || (ratio - n_cells).abs() > 1e-6 * ratio.max(1.0) {
            return Err(invalid(
                "dx",
                format!("{dx} does not divide the window length {}", x_max - x_min),
            ));
        }
        let stepping = TimeStepping::new(t_max, dt)?;
        if snapshot_times.is_empty() {
            return Err(invalid(
                "snapshot_times",
                "at least one snapshot is required",
            ));
        }
        let mut snapshot_steps = Vec::with_capacity(snapshot_times.len());
        for &t in &snapshot_times {
            let k = stepping.index_of(t).ok_or(Error::OffGrid {
                what: "time",
                value: t,
            })?;
            if snapshot_steps.last().is_some_and(|&prev| k <= prev) {
                return Err(invalid("snapshot_times", "must be strictly increasing"));
            }
            snapshot_steps.push(k);
        }
        Ok(Self {
            x_min,
            x_max,
            dx,
            n_cells: n_cells as usize,
            stepping,
            snapshot_times,
            snapshot_steps,
        })
    }

    /// `[-1, 1]`, `dx = 1e-3`, `dt = 1e-4`, `t_max = 2`, snapshots every half unit.
    pub fn standard() -> Self {
        Self::new(-1.0, 1.0, 1e-3, 2.0, 1e-4, vec![0.0, 0.5, 1.0, 1.5, 2.0])
            .expect("standard grid is valid")
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn t_max(&self) -> f64 {
        self.stepping.t_max
    }

    pub fn dt(&self) -> f64 {
        self.stepping.dt
    }

    pub fn stepping(&self) -> TimeStepping {
        self.stepping
    }

    pub fn snapshot_times(&self) -> &[f64] {
        &self.snapshot_times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    /// Node `i`, computed so that symmetric windows give exactly
    /// antisymmetric nodes.
    pub fn x(&self, i: usize) -> f64 {
        let n = self.n_cells as f64;
        let i = i as f64;
        (self.x_min * (n - i) + self.x_max * i) / n
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.x(i)).collect()
    }

    /// Index of the node at `x`, if `x` is within `1e-9·dx` of one.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let pos = (x - self.x_min) / self.dx;
        let i = pos.round();
        (i >= 0.0 && i <= self.n_cells as f64 && (pos - i).abs() <= 1e-9).then_some(i as usize)
    }

    /// Same window and times with every `stride`-th spatial node.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.n_cells % stride != 0 {
            return Err(invalid(
                "stride",
                format!("{stride} does not divide the {} grid cells", self.n_cells),
            ));
        }
        Ok(Self {
            dx: self.dx * stride as f64,
            n_cells: self.n_cells / stride,
            ..self.clone()
        })
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.n_cells == other.n_cells
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.snapshot_times == other.snapshot_times
    }
}

/// Values of a field at the grid nodes at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub time: f64,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(time: f64, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at node {i}")));
        }
        Ok(Self { time, values })
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn subsample(&self, stride: usize) -> Self {
        Self {
            time: self.time,
            values: self.values.iter().step_by(stride.max(1)).copied().collect(),
        }
    }
}

/// `sqrt(dx · Σ vᵢ²)`.
pub fn l2_norm(field: &ScalarField, dx: f64) -> f64 {
    (dx * field.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// A named initial profile.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `amplitude · exp(−r² / (r² − min(r², (x − center)²)))`, zero for `|x − center| ≥ r`.
    Bump {
        center: f64,
        radius: f64,
        amplitude: f64,
    },
    Sum(Vec<InitialCondition>),
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Bump {
            center: 0.0,
            radius: 0.1,
            amplitude: 1.0,
        }
    }
}

impl InitialCondition {
    pub fn bump(center: f64, radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("{radius} must be positive")));
        }
        if !center.is_finite() || !amplitude.is_finite() {
            return Err(invalid("bump", "center and amplitude must be finite"));
        }
        Ok(InitialCondition::Bump {
            center,
            radius,
            amplitude,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InitialCondition::Bump {
                center,
                radius,
                amplitude,
            } => {
                let r2 = radius * radius;
                let d = x - center;
                let d2 = d * d;
                if d2 >= r2 {
                    0.0
                } else {
                    amplitude * (-r2 / (r2 - d2)).exp()
                }
            }
            InitialCondition::Sum(parts) => parts.iter().map(|p| p.eval(x)).sum(),
        }
    }

    /// Smallest interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            InitialCondition::Bump { center, radius, .. } => (center - radius, center + radius),
            InitialCondition::Sum(parts) => parts
                .iter()
                .map(InitialCondition::support)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| {
                    (a.min(c), b.max(d))
                }),
        }
    }

    /// A point where `|u₀|` is maximal. For sums, the best of the component
    /// peaks evaluated on the whole sum.
    pub fn peak_location(&self) -> f64 {
        match self {
            InitialCondition::Bump { center, .. } => *center,
            InitialCondition::Sum(parts) => parts
                .iter()
                .map(InitialCondition::peak_location)
                .max_by(|a, b| self.eval(*a).abs().total_cmp(&self.eval(*b).abs()))
                .unwrap_or(0.0),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.eval(self.peak_location()).abs()
    }

    pub fn sample(&self, grid: &SpaceTimeGrid, shift: f64) -> Vec<f64> {
        (0..grid.n_nodes())
            .map(|i| self.eval(grid.x(i) + shift))
            .collect()
    }
}

/// Evaluates the configured initial condition.
pub fn eval_initial(ic: &InitialCondition, x: f64) -> f64 {
    ic.eval(x)
}

/// Scalar shift `σ·Z` of the characteristic.
fn project(sigma: &[f64], z: &[f64]) -> f64 {
    sigma.iter().zip(z).map(|(s, z)| s * z).sum()
}

fn support_inside(ic: &InitialCondition, grid: &SpaceTimeGrid, shift: f64) -> bool {
    let (lo, hi) = ic.support();
    lo - shift >= grid.x_min && hi - shift <= grid.x_max
}

/// Snapshots of one pathwise solution.
#[derive(Debug, Clone)]
pub struct PathwiseSolution {
    pub fields: Vec<ScalarField>,
    /// `σ·Z_t` at each snapshot.
    pub shifts: Vec<f64>,
    /// Whether the translated support lies inside the window.
    pub interior: Vec<bool>,
    /// `sup_x |u(t, x)|` over the real line, attained at the translated peak.
    pub sup_norms: Vec<f64>,
}

pub fn pathwise_solution(
    ic: &InitialCondition,
    cfg: &NoiseConfig,
    path: &LevyPath,
    grid: &SpaceTimeGrid,
) -> Result<PathwiseSolution> {
    if path.m() != cfg.m() {
        return Err(invalid(
            "path",
            format!("dimension {} differs from m = {}", path.m(), cfg.m()),
        ));
    }
    let peak = ic.peak_location();
    let n = grid.snapshot_times.len();
    let mut out = PathwiseSolution {
        fields: Vec::with_capacity(n),
        shifts: Vec::with_capacity(n),
        interior: Vec::with_capacity(n),
        sup_norms: Vec::with_capacity(n),
    };
    for &t in &grid.snapshot_times {
        let k = path.time_index(t).ok_or(Error::OffGrid {
            what: "path time",
            value: t,
        })?;
        let shift = project(cfg.sigma(), path.cumulative(k));
        let field = ScalarField::new(t, ic.sample(grid, shift))?;
        let translated_peak = ic.eval((peak - shift) + shift).abs();
        out.sup_norms
            .push(translated_peak.max(field.values.iter().fold(0.0, |a, v| a.max(v.abs()))));
        out.fields.push(field);
        out.shifts.push(shift);
        out.interior.push(support_inside(ic, grid, shift));
    }
    Ok(out)
}

/// Monte Carlo controls.
#[derive(Debug, Clone, PartialEq)]
pub struct McSettings {
    pub n_samples: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    /// Point at which a fine time series of the mean is recorded.
    pub probe_x: f64,
    /// Record the probe every `series_stride` time steps.
    pub series_stride: usize,
}

impl McSettings {
    pub fn new(n_samples: usize, master_seed: u64) -> Self {
        Self {
            n_samples,
            master_seed,
            workers: 0,
            probe_x: 0.0,
            series_stride: 10,
        }
    }
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, sample: impl Iterator<Item = f64>) {
        let n = self.count + 1.0;
        for ((mean, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        self.count = n;
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        let wb = other.count / n;
        let cross = self.count * other.count / n;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * wb;
            self.m2[i] += other.m2[i] + delta * delta * cross;
        }
        self.count = n;
    }

    fn stderr(&self) -> Vec<f64> {
        let n = self.count;
        self.m2
            .iter()
            .map(|m2| (m2 / (n - 1.0) / n).sqrt())
            .collect()
    }
}

struct ChunkAccumulator {
    snapshots: Vec<Moments>,
    probe: Moments,
    exits: Vec<usize>,
    rejections: u64,
}

/// Monte Carlo estimate of `U(t, x) = E u(t, x)`.
#[derive(Debug, Clone)]
pub struct McResult {
    pub n_samples: usize,
    pub master_seed: u64,
    pub mean: Vec<ScalarField>,
    pub stderr: Vec<ScalarField>,
    pub probe_x: f64,
    pub probe_times: Vec<f64>,
    pub probe_mean: Vec<f64>,
    pub probe_stderr: Vec<f64>,
    /// Paths whose translated support left the window, per snapshot.
    pub exits: Vec<usize>,
    pub rejections: u64,
}

impl McResult {
    /// Fine-grained `(t, U(t, probe_x))` series.
    pub fn probe_series(&self) -> Vec<(f64, f64)> {
        self.probe_times
            .iter()
            .copied()
            .zip(self.probe_mean.iter().copied())
            .collect()
    }
}

fn simulate_chunk(
    ic: &InitialCondition,
    cfg: &NoiseConfig,
    grid: &SpaceTimeGrid,
    settings: &McSettings,
    paths: std::ops::Range<usize>,
) -> Result<ChunkAccumulator> {
    let stepping = grid.stepping;
    let n_nodes = grid.n_nodes();
    let probe_steps = probe_steps(&stepping, settings.series_stride);
    let mut acc = ChunkAccumulator {
        snapshots: vec![Moments::new(n_nodes); grid.snapshot_steps.len()],
        probe: Moments::new(probe_steps.len()),
        exits: vec![0; grid.snapshot_steps.len()],
        rejections: 0,
    };
    let sigma = cfg.sigma();
    let mut probe_values = vec![0.0; probe_steps.len()];
    for path_index in paths {
        let mut rng = RngStream::new(settings.master_seed, path_index as u64);
        let mut stepper = PathStepper::new(cfg, stepping);
        let mut next_snapshot = 0;
        let mut next_probe = 0;
        for k in 0..=stepping.n_steps {
            if k > 0 {
                stepper.advance(k, &mut rng)?;
            }
            let take_snapshot = grid.snapshot_steps.get(next_snapshot) == Some(&k);
            let take_probe = probe_steps.get(next_probe) == Some(&k);
            if !(take_snapshot || take_probe) {
                continue;
            }
            let shift = project(sigma, &stepper.position);
            if take_snapshot {
                acc.snapshots[next_snapshot].push((0..n_nodes).map(|i| ic.eval(grid.x(i) + shift)));
                if !support_inside(ic, grid, shift) {
                    acc.exits[next_snapshot] += 1;
                }
                next_snapshot += 1;
            }
            if take_probe {
                probe_values[next_probe] = ic.eval(settings.probe_x + shift);
                next_probe += 1;
            }
        }
        acc.probe.push(probe_values.iter().copied());
        acc.rejections += stepper.rejections as u64;
    }
    Ok(acc)
}

fn probe_steps(stepping: &TimeStepping, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=stepping.n_steps).step_by(stride.max(1)).collect();
    if steps.last() != Some(&stepping.n_steps) {
        steps.push(stepping.n_steps);
    }
    steps
}

/// Averages `n_samples` pathwise solutions. Path `j` uses the random stream
/// `(master_seed, j)`, and per-chunk moments are merged in chunk order, so the
/// result is bit-identical for every worker count.
pub fn monte_carlo_mean(
    ic: &InitialCondition,
    cfg: &NoiseConfig,
    grid: &SpaceTimeGrid,
    settings: &McSettings,
) -> Result<McResult> {
    if settings.n_samples < 2 {
        return Err(invalid(
            "n_samples",
            "at least two samples are needed for a standard error",
        ));
    }
    if settings.series_stride == 0 {
        return Err(invalid("series_stride", "must be positive"));
    }
    let n = settings.n_samples;
    let chunks: Vec<_> = (0..n.div_ceil(MC_CHUNK))
        .map(|c| c * MC_CHUNK..((c + 1) * MC_CHUNK).min(n))
        .collect();
    let run = || {
        chunks
            .par_iter()
            .map(|r| simulate_chunk(ic, cfg, grid, settings, r.clone()))
            .collect::<Result<Vec<_>>>()
    };
    let partials = if settings.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?
            .install(run)?
    };

    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one chunk");
    for part in iter {
        for (a, b) in total.snapshots.iter_mut().zip(&part.snapshots) {
            a.merge(b);
        }
        total.probe.merge(&part.probe);
        for (a, b) in total.exits.iter_mut().zip(&part.exits) {
            *a += b;
        }
        total.rejections += part.rejections;
    }

    let times = grid.snapshot_times.clone();
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for (t, m) in times.iter().zip(&total.snapshots) {
        mean.push(ScalarField::new(*t, m.mean.clone())?);
        stderr.push(ScalarField::new(*t, m.stderr())?);
    }
    let stepping = grid.stepping;
    Ok(McResult {
        n_samples: n,
        master_seed: settings.master_seed,
        mean,
        stderr,
        probe_x: settings.probe_x,
        probe_times: probe_steps(&stepping, settings.series_stride)
            .into_iter()
            .map(|k| stepping.time(k))
            .collect(),
        probe_stderr: total.probe.stderr(),
        probe_mean: total.probe.mean,
        exits: total.exits,
        rejections: total.rejections,
    })
}

/// `(t, U(t, x_probe))` over the snapshot fields.
pub fn decay_series(
    fields: &[ScalarField],
    grid: &SpaceTimeGrid,
    x_probe: f64,
) -> Result<Vec<(f64, f64)>> {
    let i = grid.node_index(x_probe).ok_or(Error::OffGrid {
        what: "space",
        value: x_probe,
    })?;
    fields
        .iter()
        .map(|f| {
            if f.values.len() != grid.n_nodes() {
                return Err(Error::GridMismatch(format!(
                    "field has {} values, grid has {} nodes",
                    f.values.len(),
                    grid.n_nodes()
                )));
            }
            Ok((f.time, f.values[i]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable_noise::simulate_path;

    fn reference_noise() -> NoiseConfig {
        NoiseConfig::new(1.5, vec![0.5, 0.0]).unwrap()
    }

    #[test]
    fn initial_condition_values() {
        let ic = InitialCondition::default();
        assert_eq!(eval_initial(&ic, 0.0), (-1.0f64).exp());
        assert_eq!(eval_initial(&ic, 0.1), 0.0);
        assert_eq!(eval_initial(&ic, -0.3), 0.0);
        let expected = (-4.0f64 / 3.0).exp();
        assert!((eval_initial(&ic, 0.05) - expected).abs() < 1e-15);
        assert_eq!(ic.sup_norm(), (-1.0f64).exp());
        assert_eq!(ic.support(), (-0.1, 0.1));
    }

    #[test]
    fn grid_nodes_are_symmetric_and_exact() {
        let g = SpaceTimeGrid::standard();
        assert_eq!(g.n_nodes(), 2001);
        assert_eq!(g.x(0), -1.0);
        assert_eq!(g.x(2000), 1.0);
        assert_eq!(g.x(1000), 0.0);
        for i in 0..=1000 {
            assert_eq!(g.x(i), -g.x(2000 - i));
        }
        assert_eq!(g.node_index(0.0), Some(1000));
        assert_eq!(g.node_index(0.00005), None);
        let c = g.coarsen(5).unwrap();
        assert_eq!(c.n_nodes(), 401);
        assert_eq!(c.x(200), 0.0);
        assert!(g.coarsen(3).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(SpaceTimeGrid::new(1.0, -1.0, 0.1, 1.0, 0.1, vec![0.0]).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 0.3, 1.0, 0.1, vec![0.0]).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 0.1, 1.0, 2.0, vec![0.0]).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 0.1, 1.0, 0.1, vec![0.55]).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 0.1, 1.0, 0.1, vec![0.5, 0.2]).is_err());
    }

    #[test]
    fn l2_norm_basics() {
        let g = SpaceTimeGrid::standard();
        let zero = ScalarField::new(0.0, vec![0.0; g.n_nodes()]).unwrap();
        assert_eq!(l2_norm(&zero, g.dx()), 0.0);
        let ic = InitialCondition::default();
        let f = ScalarField::new(0.0, ic.sample(&g, 0.0)).unwrap();
        let doubled = ScalarField::new(0.0, f.values.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((l2_norm(&doubled, g.dx()) - 2.0 * l2_norm(&f, g.dx())).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_of_translates_matches_within_1e10() {
        let g = SpaceTimeGrid::standard();
        let ic = InitialCondition::default();
        let base = l2_norm(&ScalarField::new(0.0, ic.sample(&g, 0.0)).unwrap(), g.dx());
        for shift in [0.000_123_456, 0.3337, -0.71, 0.5e-3 * 0.77] {
            let moved = l2_norm(
                &ScalarField::new(0.0, ic.sample(&g, shift)).unwrap(),
                g.dx(),
            );
            assert!(((moved - base) / base).abs() <= 1e-10, "shift {shift}");
        }
    }

    #[test]
    fn zero_path_and_zero_sigma_give_initial_field() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 1e-2, 1.0, 0.1, vec![0.0, 0.5, 1.0]).unwrap();
        let ic = InitialCondition::default();
        let initial = ic.sample(&g, 0.0);
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let zero = LevyPath::from_increments(times.clone(), 2, vec![0.0; 22]).unwrap();
        let sol = pathwise_solution(&ic, &reference_noise(), &zero, &g);
        // times grid of the path is k·0.1 while snapshots are 0.5 and 1.0
        let sol = sol.unwrap();
        assert!(sol.fields.iter().all(|f| f.values == initial));

        let still = NoiseConfig::new(1.5, vec![0.0, 0.0]).unwrap();
        let path = simulate_path(&still, 1.0, 0.1, &mut RngStream::new(3, 0)).unwrap();
        let sol = pathwise_solution(&ic, &still, &path, &g).unwrap();
        assert!(sol.fields.iter().all(|f| f.values == initial));
    }

    #[test]
    fn pathwise_snapshot_off_path_grid_is_error() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 1e-2, 1.0, 0.1, vec![0.0, 0.5]).unwrap();
        let path = simulate_path(&reference_noise(), 1.0, 0.25, &mut RngStream::new(3, 0)).unwrap();
        let ic = InitialCondition::default();
        assert!(pathwise_solution(&ic, &reference_noise(), &path, &g).is_ok());
        let path = simulate_path(&reference_noise(), 1.0, 0.3, &mut RngStream::new(3, 0)).unwrap();
        assert!(matches!(
            pathwise_solution(&ic, &reference_noise(), &path, &g),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn pathwise_fields_are_translates_with_preserved_sup() {
        let g =
            SpaceTimeGrid::new(-1.0, 1.0, 1e-3, 2.0, 1e-3, vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        let ic = InitialCondition::default();
        let cfg = reference_noise();
        for seed in 0..5 {
            let path = simulate_path(&cfg, 2.0, 1e-3, &mut RngStream::new(seed, 0)).unwrap();
            let sol = pathwise_solution(&ic, &cfg, &path, &g).unwrap();
            let base = l2_norm(&sol.fields[0], g.dx());
            for (j, f) in sol.fields.iter().enumerate() {
                assert_eq!(sol.sup_norms[j], ic.sup_norm());
                assert!(f.max() <= ic.sup_norm());
                if sol.interior[j] {
                    assert!((l2_norm(f, g.dx()) / base - 1.0).abs() <= 1e-10);
                }
                let k = path.time_index(f.time).unwrap();
                let shift = 0.5 * path.cumulative(k)[0];
                assert_eq!(sol.shifts[j], shift);
                assert_eq!(f.values[1000], ic.eval(shift));
            }
        }
    }

    fn small_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(-1.0, 1.0, 1e-2, 1.0, 1e-2, vec![0.0, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn mc_zero_sigma_reproduces_initial_field_exactly() {
        let g = small_grid();
        let ic = InitialCondition::default();
        let cfg = NoiseConfig::new(1.5, vec![0.0, 0.0]).unwrap();
        let res = monte_carlo_mean(&ic, &cfg, &g, &McSettings::new(100, 1)).unwrap();
        let initial = ic.sample(&g, 0.0);
        for (m, s) in res.mean.iter().zip(&res.stderr) {
            assert_eq!(m.values, initial);
            assert!(s.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mc_is_bit_identical_across_worker_counts() {
        let g = small_grid();
        let ic = InitialCondition::default();
        let cfg = reference_noise();
        let mut s = McSettings::new(200, 42);
        s.workers = 1;
        let a = monte_carlo_mean(&ic, &cfg, &g, &s).unwrap();
        s.workers = 4;
        let b = monte_carlo_mean(&ic, &cfg, &g, &s).unwrap();
        s.workers = 3;
        let c = monte_carlo_mean(&ic, &cfg, &g, &s).unwrap();
        for r in [&b, &c] {
            assert_eq!(a.mean, r.mean);
            assert_eq!(a.stderr, r.stderr);
            assert_eq!(a.probe_mean, r.probe_mean);
            assert_eq!(a.rejections, r.rejections);
        }
    }

    #[test]
    fn mc_matches_direct_average_of_pathwise_solutions() {
        let g = small_grid();
        let ic = InitialCondition::default();
        let cfg = reference_noise();
        let n = 70;
        let res = monte_carlo_mean(&ic, &cfg, &g, &McSettings::new(n, 9)).unwrap();
        let mut samples = vec![vec![Vec::with_capacity(n); g.n_nodes()]; 3];
        for j in 0..n {
            let path = simulate_path(&cfg, 1.0, 1e-2, &mut RngStream::new(9, j as u64)).unwrap();
            let sol = pathwise_solution(&ic, &cfg, &path, &g).unwrap();
            for (s, f) in sol.fields.iter().enumerate() {
                for (i, v) in f.values.iter().enumerate() {
                    samples[s][i].push(*v);
                }
            }
        }
        let nf = n as f64;
        for s in 0..3 {
            for i in 0..g.n_nodes() {
                let xs = &samples[s][i];
                let mean = xs.iter().sum::<f64>() / nf;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                assert!((res.mean[s].values[i] - mean).abs() < 1e-14);
                assert!((res.stderr[s].values[i] - (var / nf).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mc_mean_is_linear_in_initial_data() {
        let g = small_grid();
        let cfg = reference_noise();
        let f = InitialCondition::bump(0.0, 0.1, 1.0).unwrap();
        let h = InitialCondition::bump(0.05, 0.2, -0.5).unwrap();
        let both = InitialCondition::Sum(vec![f.clone(), h.clone()]);
        let s = McSettings::new(64, 5);
        let rf = monte_carlo_mean(&f, &cfg, &g, &s).unwrap();
        let rh = monte_carlo_mean(&h, &cfg, &g, &s).unwrap();
        let rb = monte_carlo_mean(&both, &cfg, &g, &s).unwrap();
        for k in 0..3 {
            for i in 0..g.n_nodes() {
                let lhs = rb.mean[k].values[i];
                let rhs = rf.mean[k].values[i] + rh.mean[k].values[i];
                assert!((lhs - rhs).abs() <= 1e-15, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn decay_series_from_fields() {
        let g = small_grid();
        let ic = InitialCondition::default();
        let res = monte_carlo_mean(&ic, &reference_noise(), &g, &McSettings::new(50, 2)).unwrap();
        let series = decay_series(&res.mean, &g, 0.0).unwrap();
        assert_eq!(series[0], (0.0, ic.eval(0.0)));
        assert!(series.iter().all(|(_, v)| v.is_finite() && *v >= 0.0));
        assert!(matches!(
            decay_series(&res.mean, &g, 0.005),
            Err(Error::OffGrid { .. })
        ));
        assert_eq!(res.probe_times.len(), 11);
        assert_eq!(res.probe_mean[0], ic.eval(0.0));
        assert_eq!(res.probe_mean[5], series[1].1);
        assert_eq!(res.probe_mean[10], series[2].1);
    }

    #[test]
    fn mc_rejects_single_sample() {
        let g = small_grid();
        let res = monte_carlo_mean(
            &InitialCondition::default(),
            &reference_noise(),
            &g,
            &McSettings::new(1, 0),
        );
        assert!(res.is_err());
    }
}
