use entry_kinetics::diagnostics::{
    assemble_c0, check_energy_inequality, check_moment_bounds, sorting_and_learning_verdict, timescale_report,
    CheckStatus, MomentSeries, VerdictConfig,
};
use entry_kinetics::pde::{
    BoundaryMode, CoefficientSet, InitialDensity, KineticSolver, KineticState, SolveOptions, SolverConfig,
};
use entry_kinetics::prob::{linspace, verify_p_conditions};
use entry_kinetics::{Grid, ModelParams, ProbabilityFn};
use proptest::prelude::*;

fn default_params() -> ModelParams {
    ModelParams::new(11, 3.0, 0.1, 0.01).unwrap()
}

fn default_pf() -> ProbabilityFn {
    ProbabilityFn::logistic_floor(0.1, 1.0, 0.0).unwrap()
}

fn terminal(n_cells: usize, dt_max: f64, t_end: f64) -> (Vec<f64>, f64) {
    let grid = Grid::new(-12.0, 12.0, n_cells).unwrap();
    let cfg = SolverConfig {
        dt_max,
        ..SolverConfig::default()
    };
    let solver = KineticSolver::new(grid, &default_pf(), default_params(), cfg).unwrap();
    let f0 = InitialDensity::default().discretize(&grid).unwrap();
    let sol = solver.solve(f0, &SolveOptions::uniform(t_end, t_end, vec![1.0])).unwrap();
    (sol.final_state.f, sol.series.last().unwrap().alpha)
}

/// Average pairs of fine cells onto the coarse grid.
fn restrict(fine: &[f64]) -> Vec<f64> {
    fine.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

fn l1(a: &[f64], b: &[f64], dx: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * dx
}

#[test]
fn self_convergence_under_refinement() {
    let t_end = 1.0;
    let (f1, a1) = terminal(200, 0.004, t_end);
    let (f2, a2) = terminal(400, 0.002, t_end);
    let (f3, a3) = terminal(800, 0.001, t_end);
    let dx1 = 24.0 / 200.0;
    let e12 = l1(&f1, &restrict(&f2), dx1);
    let e23 = l1(&restrict(&f2), &restrict(&restrict(&f3)), dx1);
    println!("L1 differences {e12:e} {e23:e} ratio {}", e12 / e23);
    assert!(e12 / e23 >= 1.7);
    // the finer pair differs by less than the coarser pair's error estimate
    assert!((a2 - a3).abs() < (a1 - a2).abs());
}

#[test]
fn energy_inequality_in_constant_p_mode() {
    let grid = Grid::new(-8.0, 8.0, 320).unwrap();
    let pf = ProbabilityFn::constant(1.0).unwrap();
    let params = default_params();
    let solver = KineticSolver::new(grid, &pf, params, SolverConfig::default()).unwrap();
    let coeffs = CoefficientSet::frozen(0.7, 0.2);
    let mut state = KineticState::new(
        InitialDensity::Gaussian { mean: -1.0, std: 0.6 }.discretize(&grid).unwrap(),
    );
    let dt = 0.005;
    let mut dissipated = 0.0;
    let mut records = Vec::new();
    for k in 0..=400 {
        if k % 20 == 0 {
            let mut r = solver.record(&state, &[1.0]);
            r.dissipation = dissipated;
            records.push(r);
        }
        dissipated += coeffs.d * solver.grad_energy(&state) * dt;
        state = solver.step(&state, &coeffs, dt).unwrap().state;
    }
    let series = MomentSeries::new(records, params, vec![1.0]);
    let report = check_energy_inequality(&series, 1e-6);
    assert!(report.passed(), "max violation {}", report.max_violation);
}

#[test]
fn energy_constant_without_transport_or_diffusion() {
    let grid = Grid::new(-8.0, 8.0, 160).unwrap();
    let solver = KineticSolver::new(grid, &default_pf(), default_params(), SolverConfig::default()).unwrap();
    let state = KineticState::new(InitialDensity::default().discretize(&grid).unwrap());
    let e0 = solver.record(&state, &[]).energy;
    let mut s = state;
    for _ in 0..10 {
        s = solver.step(&s, &CoefficientSet::frozen(0.0, 0.0), 0.1).unwrap().state;
    }
    assert_eq!(solver.record(&s, &[]).energy, e0);
}

#[test]
fn moment_bounds_and_negative_control() {
    let grid = Grid::new(-12.0, 12.0, 400).unwrap();
    let pf = default_pf();
    let solver = KineticSolver::new(grid, &pf, default_params(), SolverConfig::default()).unwrap();
    let f0 = InitialDensity::default().discretize(&grid).unwrap();
    let sol = solver.solve(f0, &SolveOptions::uniform(20.0, 0.01, vec![1.0, 2.0])).unwrap();
    let (c0, formula) = assemble_c0(&sol.series, pf.c_p());
    let ok = check_moment_bounds(&sol.series, c0, formula.clone(), 1e-6);
    assert!(ok.passed(), "{ok:?}");
    assert!(ok.formula.contains("c_p"));
    let low = check_moment_bounds(&sol.series, 0.01 * c0, formula, 1e-6);
    assert!(!low.alpha_violations.is_empty() || !low.beta_violations.is_empty());
}

#[test]
fn diffusion_dominated_run_does_not_assert_learning_bound() {
    let params = ModelParams::new(11, 3.0, 1.0, 1.0).unwrap();
    let grid = Grid::new(-12.0, 12.0, 200).unwrap();
    let pf = default_pf();
    let solver = KineticSolver::new(grid, &pf, params, SolverConfig::default()).unwrap();
    let f0 = InitialDensity::default().discretize(&grid).unwrap();
    let t_sort = timescale_report(&params, 10.0).t_sort;
    let sol = solver.solve(f0, &SolveOptions::uniform(t_sort, t_sort / 20.0, vec![1.0])).unwrap();
    let v = sorting_and_learning_verdict(&sol.series, &params, &pf, &VerdictConfig::default());
    assert_eq!(v.check("regime").unwrap().status, CheckStatus::Fail);
    assert_eq!(v.check("a_bound").unwrap().status, CheckStatus::NotAsserted);
}

#[test]
fn presorted_density_passes_sorting_immediately() {
    let params = default_params();
    let grid = Grid::new(-12.0, 12.0, 240).unwrap();
    let pf = default_pf();
    let solver = KineticSolver::new(grid, &pf, params, SolverConfig::default()).unwrap();
    let mut f0 = vec![0.0; grid.n_cells()];
    // alpha = 0.1 * 8/9 + 1/9 = 0.2, inside the band
    f0[0] = 8.0 / 9.0 / grid.dx();
    f0[grid.n_cells() - 1] = 1.0 / 9.0 / grid.dx();
    let t_sort = timescale_report(&params, 10.0).t_sort;
    let sol = solver.solve(f0, &SolveOptions::uniform(t_sort, t_sort / 20.0, vec![1.0, 2.0])).unwrap();
    let v = sorting_and_learning_verdict(&sol.series, &params, &pf, &VerdictConfig::default());
    assert_eq!(v.check("sorting").unwrap().status, CheckStatus::Pass, "{v:?}");
    assert_eq!(v.check("alpha_band").unwrap().status, CheckStatus::Pass);
}

#[test]
fn regularized_map_keeps_certificate() {
    let pf = default_pf();
    for eps in [0.0, 0.1, 1.0] {
        let reg = pf.regularize(eps).unwrap();
        assert!((reg.p_min() - (pf.p_min() + eps) / (1.0 + eps)).abs() < 1e-15);
        let report = verify_p_conditions(&reg, &linspace(-15.0, 15.0, 3001), pf.c_p()).unwrap();
        assert!(report.certified(), "eps {eps}: {:?}", report.violations.first());
    }
}

fn random_density(weights: &[f64], grid: &Grid) -> Vec<f64> {
    let total: f64 = weights.iter().sum::<f64>() * grid.dx();
    weights.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_conserves_mass_and_positivity(
        weights in prop::collection::vec(0.0f64..1.0, 64),
        m in 3usize..30,
        frac in 0.05f64..0.95,
        h in 0.01f64..1.0,
        tau in 0.001f64..1.0,
        absorbing in any::<bool>(),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 0.1);
        let params = ModelParams::new(m, 1.0 + frac * (m as f64 - 1.0), h, tau).unwrap();
        let grid = Grid::new(-5.0, 5.0, 64).unwrap();
        let cfg = SolverConfig {
            boundary_mode: if absorbing { BoundaryMode::AbsorbingLedger } else { BoundaryMode::ZeroFlux },
            ..SolverConfig::default()
        };
        let solver = KineticSolver::new(grid, &default_pf(), params, cfg).unwrap();
        let mut state = KineticState::new(random_density(&weights, &grid));
        for _ in 0..5 {
            let c = solver.coefficients(&state).unwrap();
            prop_assert!(c.a.abs() < 1.0);
            prop_assert!((0.0..=1.0).contains(&c.b));
            prop_assert!(c.b >= c.beta);
            prop_assert!(c.d >= c.parabolicity_floor(&params));
            let dt = solver.stable_dt(&c);
            let before = state.mass(grid.dx());
            let next = solver.step(&state, &c, dt).unwrap();
            let after = next.state.mass(grid.dx());
            prop_assert!((after - before).abs() < 1e-13, "drift {}", after - before);
            prop_assert!(next.state.f.iter().all(|&v| v >= 0.0));
            prop_assert!(next.state.escaped_left >= 0.0 && next.state.escaped_right >= 0.0);
            state = next.state;
        }
    }

    #[test]
    fn timescale_ratio_is_two_over_h(h in 1e-3f64..10.0, tau in 1e-4f64..10.0, m in 2usize..200) {
        let params = ModelParams::new(m, 1.5, h, tau).unwrap();
        let t = timescale_report(&params, 10.0);
        prop_assert!((t.ratio - 2.0 / h).abs() <= 1e-12 * t.ratio);
        prop_assert!((t.transport_rate / t.diffusion_rate - t.ratio).abs() <= 1e-9 * t.ratio);
    }

    #[test]
    fn moments_respect_bounds(weights in prop::collection::vec(0.0f64..1.0, 48)) {
        prop_assume!(weights.iter().sum::<f64>() > 0.1);
        let grid = Grid::new(-6.0, 6.0, 48).unwrap();
        let pf = default_pf();
        let solver = KineticSolver::new(grid, &pf, default_params(), SolverConfig::default()).unwrap();
        let r = solver.record(&KineticState::new(random_density(&weights, &grid)), &[1.0, 2.0]);
        prop_assert!(r.alpha > pf.p_min() && r.alpha <= 1.0);
        prop_assert!(r.beta >= 0.0 && r.b >= r.beta);
        prop_assert!(r.phi >= 0.0);
        prop_assert!(r.sorting.iter().all(|s| (0.0..=1.0 + 1e-12).contains(s)));
        prop_assert!(r.sorting[0] <= r.sorting[1]);
    }
}
