//! Subcommands. Each writes its artifacts into the output directory and
//! returns whether every run-level check passed.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use entry_kinetics::abm::{
    empirical_density, ensemble_run, EnsembleSeries, InverseCdfSampler, RecordOptions, RecordSchedule,
};
use entry_kinetics::closure::{
    averaged_coefficients_exact, closure_coefficients, expanded_diffusion_factor,
    payoff_moments_from_probabilities, exact_payoff_moments, DiscreteDistribution,
};
use entry_kinetics::csv;
use entry_kinetics::diagnostics::{
    assemble_c0, check_energy_inequality, check_moment_bounds, sorting_and_learning_verdict, CheckStatus,
    MomentSeries,
};
use entry_kinetics::pde::{KineticSolver, Solution, SolveOptions};
use entry_kinetics::prob::{linspace, verify_p_conditions, Family};
use entry_kinetics::{Grid, ModelParams, ProbabilityFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Cadence, ExperimentConfig, SweepPoint};
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Abm,
    Pde,
    Compare,
    Sweep,
    Checkp,
    Checkclosure,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] entry_kinetics::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

type Result<T> = std::result::Result<T, RunError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Summary of a finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub report: Report,
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let echo = out.join("config.toml");
    fs::write(&echo, cfg.to_toml()).map_err(io_err(&echo))?;
    let mut report = Report::new();
    report.set("command", format!("{cmd:?}").to_lowercase());
    report.set("config_hash", cfg.hash());
    let passed = match cmd {
        Command::Abm => run_abm(cfg, out, &mut report)?,
        Command::Pde => run_pde(cfg, cfg.params()?, out, &mut report)?.passed,
        Command::Compare => run_compare(cfg, out, &mut report)?,
        Command::Sweep => run_sweep(cfg, out, &mut report)?,
        Command::Checkp => run_checkp(cfg, out, &mut report)?,
        Command::Checkclosure => run_checkclosure(cfg, out, &mut report)?,
    };
    report.set("status", if passed { "pass" } else { "fail" });
    report.write(out).map_err(io_err(out))?;
    Ok(Outcome { passed, report })
}

fn schedule(cfg: &ExperimentConfig) -> RecordSchedule {
    match cfg.output.cadence {
        Cadence::Every { stride } => RecordSchedule::every(stride, cfg.abm.rounds),
        Cadence::Geometric { dense, ratio } => RecordSchedule::geometric(cfg.abm.rounds, dense, ratio),
    }
}

fn abm_ensemble(cfg: &ExperimentConfig, params: &ModelParams, pf: &ProbabilityFn, grid: &Grid) -> Result<EnsembleSeries> {
    let f0 = cfg.abm.x0.discretize(grid)?;
    let sampler = InverseCdfSampler::new(*grid, &f0)?;
    let opts = RecordOptions {
        schedule: schedule(cfg),
        windows: cfg.diagnostics.windows.clone(),
        snapshot_rounds: cfg.snapshot_rounds(),
    };
    Ok(ensemble_run(
        cfg.abm.replicas,
        cfg.abm.base_seed,
        &sampler,
        cfg.abm.rounds,
        params,
        pf,
        &opts,
    )?)
}

fn write_abm_outputs(cfg: &ExperimentConfig, series: &EnsembleSeries, grid: &Grid, out: &Path) -> Result<()> {
    write_with(&out.join("abm_series.csv"), |w| csv::write_abm(series, &cfg.diagnostics.windows, w))?;
    for (n, xs) in &series.snapshots {
        let d = empirical_density(xs, grid);
        write_with(&out.join(format!("abm_hist_n{n}.csv")), |w| csv::write_histogram(&d, grid, w))?;
    }
    Ok(())
}

fn run_abm(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<bool> {
    let (params, pf, grid) = (cfg.params()?, cfg.probability()?, cfg.grid()?);
    let series = abm_ensemble(cfg, &params, &pf, &grid)?;
    write_abm_outputs(cfg, &series, &grid, out)?;
    report.set("replicas", cfg.abm.replicas);
    report.set("rounds", cfg.abm.rounds);
    report.set("base_seed", cfg.abm.base_seed);
    if let Some(last) = series.records.last() {
        report.set("final_alpha_hat", last.alpha_hat_mean);
        report.set("final_alpha_hat_se", last.alpha_hat_se);
        for (r, s) in cfg.diagnostics.windows.iter().zip(&last.sorting_mean) {
            report.set(format!("final_sort_frac_R{r}"), s);
        }
    }
    Ok(true)
}

/// A PDE solve together with its diagnostics.
pub struct PdeRun {
    pub solution: Solution,
    pub passed: bool,
}

fn solve_pde(
    cfg: &ExperimentConfig,
    params: ModelParams,
    t_end: f64,
    extra_records: &[f64],
    snapshot_times: Vec<f64>,
) -> Result<(KineticSolver, Solution)> {
    let (pf, grid) = (cfg.probability()?, cfg.grid()?);
    let solver = KineticSolver::new(grid, &pf, params, cfg.pde.solver.clone())?;
    let f0 = cfg.abm.x0.discretize(&grid)?;
    let mut record_times = cfg.record_times(t_end);
    record_times.extend_from_slice(extra_records);
    let opts = SolveOptions {
        t_end,
        record_times,
        snapshot_times,
        windows: cfg.diagnostics.windows.clone(),
    };
    let solution = solver.solve(f0, &opts)?;
    Ok((solver, solution))
}

fn write_pde_outputs(solver: &KineticSolver, solution: &Solution, out: &Path, report: &mut Report) -> Result<()> {
    write_with(&out.join("moments.csv"), |w| csv::write_moments(&solution.series, w))?;
    for (k, snap) in solution.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.csv");
        write_with(&out.join(&name), |w| csv::write_snapshot(snap, solver.grid(), &solver.cells().p, w))?;
        report.set(format!("snapshot_{k:03}_t"), snap.t);
    }
    Ok(())
}

/// Conservation, a-priori monitors and the long-time verdict. The regime
/// check only classifies the run, so it never fails it.
fn assess_pde(cfg: &ExperimentConfig, solver: &KineticSolver, solution: &Solution, report: &mut Report) -> bool {
    let stats = &solution.stats;
    let series = &solution.series;
    let d = &cfg.diagnostics;
    report.set("steps", stats.steps);
    report.set("min_dt", stats.min_dt);
    report.set("max_dt", stats.max_dt);
    report.set("max_step_mass_drift", stats.max_step_mass_drift);
    report.set("clipped_total", stats.clipped_total);
    report.set("min_value", stats.min_value);
    let last = &solution.final_state;
    report.set("escaped_left", last.escaped_left);
    report.set("escaped_right", last.escaped_right);
    let conservation = stats.min_value >= 0.0
        && stats.clipped_total < d.clipped_tol
        && stats.max_step_mass_drift < cfg.pde.solver.mass_tol;
    report.set("conservation", status(conservation));

    let monitors_ok = series.records.iter().all(|r| r.a.abs() < 1.0 && (0.0..=1.0).contains(&r.b) && r.b >= r.beta);
    report.set("apriori_monitors", status(monitors_ok));

    let energy = check_energy_inequality(series, cfg.pde.solver.energy_tol);
    report.set("energy_max_violation", energy.max_violation);
    report.set("energy", status(energy.passed()));

    let (c0, formula) = assemble_c0(series, solver.pf().c_p());
    let bounds = check_moment_bounds(series, c0, formula, d.bounds_tol);
    report.set("c0", bounds.c0);
    report.set("c0_formula", &bounds.formula);
    report.set("bounds_max_alpha_ratio", bounds.max_alpha_ratio);
    report.set("bounds_max_beta_ratio", bounds.max_beta_ratio);
    report.set("bounds_min_lower_ratio", bounds.min_lower_bound_ratio);
    report.set("bounds_fd_alpha_ratio", bounds.max_fd_alpha_ratio);
    report.set("bounds_fd_beta_ratio", bounds.max_fd_beta_ratio);
    report.set("bounds", status(bounds.passed()));

    let verdict = sorting_and_learning_verdict(series, solver.params(), solver.pf(), &d.verdict());
    let t = verdict.timescales;
    report.set("transport_rate", t.transport_rate);
    report.set("diffusion_rate", t.diffusion_rate);
    report.set("timescale_ratio", t.ratio);
    report.set("t_learn", t.t_learn);
    report.set("t_sort", t.t_sort);
    let mut verdict_ok = true;
    for c in &verdict.checks {
        report.set(format!("verdict_{}", c.name), c.status.as_str());
        report.note(format!("{}: {} ({})", c.name, c.status.as_str(), c.detail));
        if c.name != "regime" && c.status == CheckStatus::Fail {
            verdict_ok = false;
        }
    }
    conservation && monitors_ok && energy.passed() && bounds.passed() && verdict_ok
}

fn status(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

pub fn run_pde(cfg: &ExperimentConfig, params: ModelParams, out: &Path, report: &mut Report) -> Result<PdeRun> {
    let (solver, solution) = solve_pde(cfg, params, cfg.pde.t_end, &[], cfg.snapshot_times())?;
    write_pde_outputs(&solver, &solution, out, report)?;
    let passed = assess_pde(cfg, &solver, &solution, report);
    Ok(PdeRun { solution, passed })
}

/// Histogram `xs` on `grid` and merge `width` cells per bin.
fn coarse(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks(width).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn run_compare(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<bool> {
    let (params, pf, grid) = (cfg.params()?, cfg.probability()?, cfg.grid()?);
    let ens = abm_ensemble(cfg, &params, &pf, &grid)?;
    write_abm_outputs(cfg, &ens, &grid, out)?;

    // round n is time tau * n, computed exactly as the ABM records it
    let times: Vec<f64> = ens.records.iter().map(|r| r.t).collect();
    let snap_times: Vec<f64> = ens.snapshots.iter().map(|(n, _)| params.tau() * *n as f64).collect();
    let t_end = params.tau() * cfg.abm.rounds as f64;
    let (solver, solution) = solve_pde(cfg, params, t_end, &times, snap_times)?;
    write_pde_outputs(&solver, &solution, out, report)?;

    let c = &cfg.compare;
    let mut sup_diff: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut max_se: f64 = 0.0;
    let mut rows = Vec::with_capacity(ens.records.len());
    for a in &ens.records {
        let pde = solution
            .series
            .records
            .iter()
            .find(|r| (r.t - a.t).abs() <= 1e-9 * t_end.max(1.0))
            .ok_or_else(|| entry_kinetics::Error::Contract(format!("no PDE record at t = {}", a.t)))?;
        let diff = (a.alpha_hat_mean - pde.alpha).abs();
        let allowed = c.se_factor * a.alpha_hat_se + c.allowance;
        sup_diff = sup_diff.max(diff);
        max_se = max_se.max(a.alpha_hat_se);
        worst_ratio = worst_ratio.max(diff / allowed);
        rows.push((a.n, a.t, a.alpha_hat_mean, a.alpha_hat_se, pde.alpha, diff, allowed));
    }
    write_with(&out.join("compare.csv"), |w| {
        writeln!(w, "n,t,alpha_abm,alpha_abm_se,alpha_pde,abs_diff,allowed")?;
        for (n, t, aa, se, ap, d, al) in &rows {
            writeln!(w, "{n},{t:e},{aa:e},{se:e},{ap:e},{d:e},{al:e}")?;
        }
        Ok(())
    })?;
    let alpha_ok = worst_ratio <= 1.0;
    report.set("alpha_sup_diff", sup_diff);
    report.set("alpha_max_se", max_se);
    report.set("alpha_worst_ratio", worst_ratio);
    report.set("alpha_agreement", status(alpha_ok));

    let mut l1_ok = true;
    let width = c.l1_coarsen;
    let bin = grid.dx() * width as f64;
    for ((n, xs), snap) in ens.snapshots.iter().zip(&solution.snapshots) {
        let emp = empirical_density(xs, &grid);
        let (fa, fp) = (coarse(&emp.f, width), coarse(&snap.f, width));
        let in_grid: f64 = fa
            .iter()
            .zip(&fp)
            .enumerate()
            .map(|(k, (a, p))| (a - p).abs() * bin.min(grid.dx() * (grid.n_cells() - k * width) as f64))
            .sum();
        // mass that has left the grid counts on both sides
        let outside = (emp.left - snap.escaped_left).abs() + (emp.right - snap.escaped_right).abs();
        let l1 = in_grid + outside;
        l1_ok &= l1 < c.l1_tol;
        report.set(format!("l1_n{n}"), l1);
        report.set(format!("l1_outside_n{n}"), outside);
        write_with(&out.join(format!("compare_density_n{n}.csv")), |w| {
            writeln!(w, "x_center,f_abm,f_pde")?;
            for (k, (a, p)) in fa.iter().zip(&fp).enumerate() {
                let lo = grid.face(k * width);
                let hi = grid.face(((k + 1) * width).min(grid.n_cells()));
                writeln!(w, "{:e},{a:e},{p:e}", 0.5 * (lo + hi))?;
            }
            Ok(())
        })?;
    }
    report.set("l1_tol", c.l1_tol);
    report.set("density_agreement", status(l1_ok));
    Ok(alpha_ok && l1_ok)
}

/// First record time at which `pred` holds.
fn first_time(series: &MomentSeries, pred: impl Fn(&entry_kinetics::diagnostics::MomentRecord) -> bool) -> f64 {
    series.records.iter().find(|r| pred(r)).map_or(f64::NAN, |r| r.t)
}

/// Measured learning time (alpha first inside the Nash band) and sorting
/// time (every sorting window first below `threshold`).
pub fn measured_times(series: &MomentSeries, params: &ModelParams, threshold: f64) -> (f64, f64) {
    let (lo, hi) = params.learning_band();
    let learn = first_time(series, |r| r.alpha > lo && r.alpha < hi);
    let sort = first_time(series, |r| r.sorting.iter().all(|&s| s < threshold));
    (learn, sort)
}

const SWEEP_HEADER: &str = "point,M,Mc,h,tau,status,learning_time,sorting_time,sort_over_learn,conservation,energy,bounds,phi_decay,sorting,alpha_band,a_bound,regime,error";

fn sweep_point(cfg: &ExperimentConfig, pt: &SweepPoint, dir: &Path) -> Result<(bool, Report, (f64, f64))> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut point_cfg = cfg.clone();
    point_cfg.model.m = pt.m;
    point_cfg.model.mc = pt.mc;
    point_cfg.model.h = pt.h;
    point_cfg.model.tau = pt.tau;
    point_cfg.sweep = Default::default();
    let echo = dir.join("config.toml");
    fs::write(&echo, point_cfg.to_toml()).map_err(io_err(&echo))?;
    let params = ModelParams::new(pt.m, pt.mc, pt.h, pt.tau)?;
    let mut report = Report::new();
    report.set("config_hash", point_cfg.hash());
    let run = run_pde(&point_cfg, params, dir, &mut report)?;
    let times = measured_times(&run.solution.series, &params, cfg.sweep.sorting_threshold);
    report.set("learning_time", times.0);
    report.set("sorting_time", times.1);
    report.set("status", status(run.passed));
    report.write(dir).map_err(io_err(dir))?;
    Ok((run.passed, report, times))
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<bool> {
    let points = cfg.sweep_points();
    let results: Vec<_> = points
        .par_iter()
        .enumerate()
        .map(|(k, pt)| sweep_point(cfg, pt, &out.join(format!("point_{k:03}"))))
        .collect();
    let mut all_ok = true;
    let path = out.join("sweep_summary.csv");
    let mut w = create(&path)?;
    let mut lines = vec![SWEEP_HEADER.to_string()];
    for (k, (pt, res)) in points.iter().zip(&results).enumerate() {
        let head = format!("{k},{},{:e},{:e},{:e}", pt.m, pt.mc, pt.h, pt.tau);
        match res {
            Ok((passed, r, (learn, sort))) => {
                all_ok &= *passed;
                let col = |key: &str| r.get(key).unwrap_or("").to_string();
                lines.push(format!(
                    "{head},{},{learn:e},{sort:e},{:e},{},{},{},{},{},{},{},{},",
                    status(*passed),
                    sort / learn,
                    col("conservation"),
                    col("energy"),
                    col("bounds"),
                    col("verdict_phi_decay"),
                    col("verdict_sorting"),
                    col("verdict_alpha_band"),
                    col("verdict_a_bound"),
                    col("verdict_regime"),
                ));
            }
            Err(e) => {
                all_ok = false;
                let msg = e.to_string().replace([',', '\n'], ";");
                lines.push(format!("{head},error,NaN,NaN,NaN,,,,,,,,,{msg}"));
            }
        }
    }
    for l in &lines {
        writeln!(w, "{l}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    report.set("points", points.len());
    report.set("failed_points", results.iter().filter(|r| !matches!(r, Ok((true, ..)))).count());
    Ok(all_ok)
}

fn probe_range(cfg: &ExperimentConfig, pf: &ProbabilityFn) -> (f64, f64) {
    match pf.family() {
        Family::Tabulated(t) => t.range(),
        _ => (cfg.pde.grid.x_min, cfg.pde.grid.x_max),
    }
}

fn run_checkp(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<bool> {
    let pf = cfg.probability()?;
    let (lo, hi) = probe_range(cfg, &pf);
    let grid = linspace(lo, hi, 4001);
    let cr = verify_p_conditions(&pf, &grid, pf.c_p())?;
    write_with(&out.join("condition_violations.csv"), |w| {
        writeln!(w, "x,kind,lhs,rhs")?;
        for v in &cr.violations {
            writeln!(w, "{:e},{:?},{:e},{:e}", v.x, v.kind, v.lhs, v.rhs)?;
        }
        Ok(())
    })?;
    report.set("p_min", pf.p_min());
    report.set("c_p_tested", cr.c_p_tested);
    report.set("minimal_c_p", cr.minimal_c_p);
    report.set("test_points", grid.len());
    report.set("violations", cr.violations.len());
    report.set("flat_points", cr.flat_points.len());
    report.set("certified", cr.certified());
    Ok(cr.certified())
}

struct OracleRow {
    check: &'static str,
    m: usize,
    cases: usize,
    max_error: f64,
    tol: f64,
}

impl OracleRow {
    fn passed(&self) -> bool {
        self.max_error <= self.tol
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, max_atoms: usize) -> Result<DiscreteDistribution> {
    let k = rng.random_range(1..=max_atoms);
    let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(k);
    while atoms.len() < k {
        let x = rng.random_range(-4.0..4.0);
        if atoms.iter().all(|a| a.0 != x) {
            atoms.push((x, rng.random_range(0.05..1.0)));
        }
    }
    Ok(DiscreteDistribution::normalized(atoms)?)
}

/// Closure identities on random inputs drawn from `seed`.
fn closure_rows(pf: &ProbabilityFn, seed: u64) -> Result<Vec<OracleRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for m in 2..=8usize {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let f = random_distribution(&mut rng, 4)?;
            let mc = 1.0 + rng.random_range(0.01..0.99) * (m as f64 - 1.0);
            let params = ModelParams::new(m, mc, 0.1, 0.01)?;
            let closed = closure_coefficients(&f, &params, pf)?;
            let got = averaged_coefficients_exact(&f, f.atoms()[0].0, &params, pf)?;
            worst = worst
                .max((got.drift - closed.drift_factor).abs())
                .max((got.diffusion - closed.diffusion_factor).abs());
        }
        rows.push(OracleRow {
            check: "averaged_closure",
            m,
            cases: 50,
            max_error: worst,
            tol: 1e-12,
        });
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (p1, p2): (f64, f64) = (rng.random(), rng.random());
        let mc = rng.random_range(1.0..2.0);
        let pm = payoff_moments_from_probabilities(&[p1, p2], mc)?;
        worst = worst
            .max((pm.drift[0] - p1 * (mc - 1.0 - p2)).abs())
            .max((pm.diffusion[(0, 1)] - p1 * p2 * (mc - 2.0).powi(2)).abs());
    }
    rows.push(OracleRow {
        check: "two_agent_moments",
        m: 2,
        cases: 100,
        max_error: worst,
        tol: 1e-12,
    });

    let params = ModelParams::new(6, 2.5, 0.1, 0.01)?;
    let mut most_negative: f64 = 0.0;
    for _ in 0..100 {
        let xbar: Vec<f64> = (0..6).map(|_| rng.random_range(-6.0..6.0)).collect();
        let pm = exact_payoff_moments(&xbar, &params, pf)?;
        most_negative = most_negative.max(-pm.min_eigenvalue());
    }
    rows.push(OracleRow {
        check: "diffusion_psd",
        m: 6,
        cases: 100,
        max_error: most_negative.max(0.0),
        tol: 1e-10,
    });

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(2..40usize);
        let mc = 1.0 + rng.random_range(0.01..0.99) * (m as f64 - 1.0);
        let params = ModelParams::new(m, mc, 0.1, 0.01)?;
        let alpha: f64 = rng.random();
        let m1 = m as f64 - 1.0;
        let a = params.kappa() - alpha;
        let closed = m1 * m1 * a * a + m1 * alpha * (1.0 - alpha);
        worst = worst.max((closed - expanded_diffusion_factor(alpha, &params)).abs() / closed.abs().max(1.0));
    }
    rows.push(OracleRow {
        check: "expanded_diffusion",
        m: 0,
        cases: 100,
        max_error: worst,
        tol: 1e-9,
    });
    Ok(rows)
}

fn run_checkclosure(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<bool> {
    let pf = cfg.probability()?;
    let rows = closure_rows(&pf, cfg.abm.base_seed)?;
    write_with(&out.join("closure_table.csv"), |w| {
        writeln!(w, "check,M,cases,max_error,tol,status")?;
        for r in &rows {
            writeln!(w, "{},{},{},{:e},{:e},{}", r.check, r.m, r.cases, r.max_error, r.tol, status(r.passed()))?;
        }
        Ok(())
    })?;
    let failed = rows.iter().filter(|r| !r.passed()).count();
    report.set("checks", rows.len());
    report.set("failed_checks", failed);
    Ok(failed == 0)
}
