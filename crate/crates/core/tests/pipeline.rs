use levy_transport::decay_analysis::{fit_power_law, FitMode};
use levy_transport::nonlocal_operator::{evolve, EvolutionConfig, OperatorSpec, QuadratureParams};
use levy_transport::stable_noise::{simulate_path, NoiseConfig, RngStream};
use levy_transport::transport_sim::{
    decay_series, monte_carlo_mean, pathwise_solution, InitialCondition, McSettings, SpaceTimeGrid,
};

fn small_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(-1.0, 1.0, 1e-2, 1.0, 1e-3, vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap()
}

#[test]
fn monte_carlo_mean_is_the_average_of_independent_pathwise_runs() {
    let cfg = NoiseConfig::new(1.5, vec![0.5, 0.0]).unwrap();
    let grid = small_grid();
    let ic = InitialCondition::default();
    let n = 100;
    let mc = monte_carlo_mean(&ic, &cfg, &grid, &McSettings::new(n, 7)).unwrap();

    let mut samples =
        vec![vec![Vec::with_capacity(n); grid.n_nodes()]; grid.snapshot_times().len()];
    for j in 0..n {
        let mut rng = RngStream::new(7, j as u64);
        let path = simulate_path(&cfg, grid.t_max(), grid.dt(), &mut rng).unwrap();
        let sol = pathwise_solution(&ic, &cfg, &path, &grid).unwrap();
        for (k, f) in sol.fields.iter().enumerate() {
            for (i, v) in f.values.iter().enumerate() {
                samples[k][i].push(*v);
            }
        }
    }
    for (k, per_node) in samples.iter().enumerate() {
        for (i, xs) in per_node.iter().enumerate() {
            let mean = xs.iter().sum::<f64>() / n as f64;
            assert!((mc.mean[k].values[i] - mean).abs() < 1e-14);
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            assert!((mc.stderr[k].values[i] - (var / n as f64).sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn pde_and_monte_carlo_decay_together() {
    let cfg = NoiseConfig::new(1.5, vec![0.5, 0.0]).unwrap();
    let grid = small_grid();
    let ic = InitialCondition::default();
    let mc = monte_carlo_mean(&ic, &cfg, &grid, &McSettings::new(2000, 3)).unwrap();
    let spec = OperatorSpec::for_noise(&cfg, QuadratureParams::default())
        .unwrap()
        .aligned_to(grid.dx())
        .unwrap();
    let pde = evolve(
        &ic,
        &EvolutionConfig::new(&spec, grid.clone(), None).unwrap(),
    )
    .unwrap();
    for (k, (a, b)) in mc.mean.iter().zip(&pde.fields).enumerate().skip(1) {
        let gap = a
            .values
            .iter()
            .zip(&b.values)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let se = mc.stderr[k].values.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            gap < 4.0 * se + 0.05 * ic.sup_norm(),
            "t = {}: gap {gap}, se {se}",
            a.time
        );
    }
    let series = decay_series(&pde.fields, &grid, 0.0).unwrap();
    assert!(series.windows(2).all(|w| w[1].1 < w[0].1));
    let fit = fit_power_law(&mc.probe_series(), (0.25, 1.0), FitMode::FreeExponent).unwrap();
    assert!(fit.exponent < 0.0);
}

#[test]
fn zero_noise_leaves_everything_fixed() {
    let cfg = NoiseConfig::new(1.5, vec![0.0, 0.0]).unwrap();
    let grid = small_grid();
    let ic = InitialCondition::default();
    let mc = monte_carlo_mean(&ic, &cfg, &grid, &McSettings::new(10, 1)).unwrap();
    let spec = OperatorSpec::for_noise(&cfg, QuadratureParams::default()).unwrap();
    let pde = evolve(
        &ic,
        &EvolutionConfig::new(&spec, grid.clone(), None).unwrap(),
    )
    .unwrap();
    let u0 = ic.sample(&grid, 0.0);
    for (a, b) in mc.mean.iter().zip(&pde.fields) {
        assert_eq!(a.values, u0);
        assert_eq!(b.values, u0);
    }
}
