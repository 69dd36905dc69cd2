//! Finite-volume solver for the one-particle kinetic equation
//!
//! ```text
//! f_t + c(t) (p f)_x - d(t) (p f)_xx = 0,
//! c = h (M-1) a / tau,   d = h^2 (M-1)^2 / (2 tau) * (a^2 + b / (M-1)),
//! a = kappa - alpha,     b = alpha (1 - alpha),   alpha = int p f.
//! ```
//!
//! With `g = p f` every face flux has the form `F = A g_left - B g_right` with
//! `A, B >= 0`. Two choices of `(A, B)` are provided:
//!
//! * `Fitted` (default): exponentially fitted (Scharfetter-Gummel) weights
//!   `A = d/dx B(-Pe)`, `B = d/dx B(Pe)` with `B(z) = z / (e^z - 1)` and cell
//!   Péclet number `Pe = c dx / d`. Second order when `Pe -> 0`, upwind when
//!   `|Pe| -> infinity`. Advection and diffusion share the theta weighting.
//! * `Upwind`: first-order upwind advection treated explicitly, centered
//!   diffusion with theta weighting.
//!
//! Coefficients are lagged: each step freezes `c, d` at the start-of-step
//! density (optionally refreshed by Picard iterations), so every step is a
//! linear tridiagonal solve. The implicit matrix has nonpositive off-diagonals
//! and unit column sums, hence a nonnegative inverse, and the explicit part is
//! kept nonnegative by the step-size rule; the update is conservative because
//! it is written in flux form.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{alpha_beta, moments_with, MomentRecord, MomentSeries};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::prob::ProbabilityFn;

const MIN_DT: f64 = 1e-14;
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// No flux through either end. On a bounded domain the long-time limit
    /// is `p f ~ const`, which keeps mass near the origin.
    ZeroFlux,
    /// Outflow through a zero ghost state; what leaves is booked in a ledger.
    /// Default.
    AbsorbingLedger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionScheme {
    Fitted,
    Upwind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub theta: f64,
    pub dt_max: f64,
    pub cfl: f64,
    pub boundary_mode: BoundaryMode,
    pub advection: AdvectionScheme,
    pub epsilon: f64,
    pub picard_iters: usize,
    pub mass_tol: f64,
    pub energy_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            dt_max: 0.01,
            cfl: 0.9,
            boundary_mode: BoundaryMode::AbsorbingLedger,
            advection: AdvectionScheme::Fitted,
            epsilon: 0.0,
            picard_iters: 0,
            mass_tol: 1e-9,
            energy_tol: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Vec<Error> {
        let mut errors = Vec::new();
        if !(0.5..=1.0).contains(&self.theta) {
            errors.push(invalid("pde.solver.theta", format!("need 0.5 <= theta <= 1, got {}", self.theta)));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            errors.push(invalid("pde.solver.dt_max", format!("need dt_max > 0, got {}", self.dt_max)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            errors.push(invalid("pde.solver.cfl", format!("need 0 < cfl <= 1, got {}", self.cfl)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            errors.push(invalid("pde.solver.epsilon", format!("need epsilon >= 0, got {}", self.epsilon)));
        }
        if !(self.mass_tol > 0.0) {
            errors.push(invalid("pde.solver.mass_tol", "must be positive"));
        }
        if !(self.energy_tol > 0.0) {
            errors.push(invalid("pde.solver.energy_tol", "must be positive"));
        }
        errors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    pub f: Vec<f64>,
    pub t: f64,
    pub escaped_left: f64,
    pub escaped_right: f64,
}

impl KineticState {
    pub fn new(f: Vec<f64>) -> Self {
        Self {
            f,
            t: 0.0,
            escaped_left: 0.0,
            escaped_right: 0.0,
        }
    }

    pub fn grid_mass(&self, dx: f64) -> f64 {
        self.f.iter().sum::<f64>() * dx
    }

    /// Mass on the grid plus the escaped ledger.
    pub fn mass(&self, dx: f64) -> f64 {
        self.grid_mass(dx) + self.escaped_left + self.escaped_right
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CoefficientSet {
    pub fn from_moments(alpha: f64, beta: f64, params: &ModelParams) -> Self {
        let m1 = params.agents() as f64 - 1.0;
        let a = params.kappa() - alpha;
        let b = alpha * (1.0 - alpha);
        let (h, tau) = (params.h(), params.tau());
        Self {
            alpha,
            beta,
            a,
            b,
            c: h * m1 * a / tau,
            d: h * h * m1 * m1 / (2.0 * tau) * (a * a + b / m1),
        }
    }

    /// Externally prescribed transport and diffusion; the moment fields are
    /// not meaningful.
    pub fn frozen(c: f64, d: f64) -> Self {
        Self {
            alpha: f64::NAN,
            beta: f64::NAN,
            a: f64::NAN,
            b: f64::NAN,
            c,
            d,
        }
    }

    /// Lower bound `h^2 (M-1) / (2 tau) * beta` implied by `b >= beta`.
    pub fn parabolicity_floor(&self, params: &ModelParams) -> f64 {
        let m1 = params.agents() as f64 - 1.0;
        params.h() * params.h() * m1 / (2.0 * params.tau()) * self.beta
    }
}

/// `p` and `1 - p` at cell centers and at the left end of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilities {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_left_end: f64,
    pub q_left_end: f64,
}

impl CellProbabilities {
    pub fn new(grid: &Grid, pf: &ProbabilityFn) -> Result<Self> {
        let centers = grid.centers();
        Ok(Self {
            p: centers.iter().map(|&x| pf.value(x)).collect::<Result<_>>()?,
            q: centers.iter().map(|&x| pf.one_minus(x)).collect::<Result<_>>()?,
            p_left_end: pf.value(grid.x_min())?,
            q_left_end: pf.one_minus(grid.x_min())?,
        })
    }

    pub fn p_max(&self) -> f64 {
        self.p.iter().cloned().fold(0.0, f64::max)
    }
}

/// `z / (e^z - 1)`, continuous at 0.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z / 2.0 + z * z / 12.0
    } else if z > 700.0 {
        z * (-z).exp()
    } else {
        z / z.exp_m1()
    }
}

/// Face weights of the flux `F = A g_left - B g_right`, split into the part
/// treated implicitly and the part treated explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FaceWeights {
    implicit: (f64, f64),
    explicit: (f64, f64),
}

impl FaceWeights {
    fn new(c: f64, d: f64, dx: f64, theta: f64, scheme: AdvectionScheme) -> Self {
        let diff = d / dx;
        match scheme {
            AdvectionScheme::Fitted => {
                let (a, b) = if d > 0.0 {
                    let pe = c * dx / d;
                    (diff * bernoulli(-pe), diff * bernoulli(pe))
                } else {
                    (c.max(0.0), (-c).max(0.0))
                };
                Self {
                    implicit: (theta * a, theta * b),
                    explicit: ((1.0 - theta) * a, (1.0 - theta) * b),
                }
            }
            AdvectionScheme::Upwind => Self {
                implicit: (theta * diff, theta * diff),
                explicit: (
                    (1.0 - theta) * diff + c.max(0.0),
                    (1.0 - theta) * diff + (-c).max(0.0),
                ),
            },
        }
    }

    fn total(&self) -> (f64, f64) {
        (
            self.implicit.0 + self.explicit.0,
            self.implicit.1 + self.explicit.1,
        )
    }
}

/// Face fluxes `F_0 .. F_N` (left boundary face first) for weights `(a, b)`.
fn face_fluxes(g: &[f64], (a, b): (f64, f64), absorbing: bool) -> Vec<f64> {
    let n = g.len();
    let mut flux = vec![0.0; n + 1];
    for k in 1..n {
        flux[k] = a * g[k - 1] - b * g[k];
    }
    if absorbing {
        flux[0] = -b * g[0];
        flux[n] = a * g[n - 1];
    }
    flux
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut pivot = diag[0];
    if !(pivot > 0.0) {
        return Err(Error::Parabolicity(format!("non-positive pivot {pivot} in row 0")));
    }
    c_prime[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c_prime[i - 1];
        if !(pivot > 0.0) {
            return Err(Error::Parabolicity(format!("non-positive pivot {pivot} in row {i}")));
        }
        if i + 1 < n {
            c_prime[i] = upper[i] / pivot;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: KineticState,
    /// Negative mass removed by clipping in this step.
    pub clipped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub f: Vec<f64>,
    /// Total flux of `p f` through the left face of each cell.
    pub flux_left_face: Vec<f64>,
    pub escaped_left: f64,
    pub escaped_right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub steps: usize,
    pub clipped_total: f64,
    pub max_clipped_step: f64,
    /// Largest change of the total (grid + ledger) mass over one step.
    pub max_step_mass_drift: f64,
    pub min_value: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    /// `sum_n d_n G_n dt_n` over all steps.
    pub dissipation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub t_end: f64,
    /// Times (within `[0, t_end]`) at which moment records are written.
    pub record_times: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    /// Sorting window half-widths.
    pub windows: Vec<f64>,
}

impl SolveOptions {
    /// Records at multiples of `interval` and at `t_end`.
    pub fn uniform(t_end: f64, interval: f64, windows: Vec<f64>) -> Self {
        let mut record_times = Vec::new();
        if interval > 0.0 {
            let count = (t_end / interval).floor() as usize;
            record_times.extend((0..=count).map(|k| k as f64 * interval));
        }
        record_times.push(t_end);
        Self {
            t_end,
            record_times,
            snapshot_times: Vec::new(),
            windows,
        }
    }

    fn normalized_times(times: &[f64], t_end: f64) -> Vec<f64> {
        let mut v: Vec<f64> = times
            .iter()
            .copied()
            .filter(|&t| t >= 0.0 && t <= t_end * (1.0 + TIME_EPS))
            .map(|t| t.min(t_end))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS * t_end.max(1.0));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub series: MomentSeries,
    pub snapshots: Vec<Snapshot>,
    pub final_state: KineticState,
    pub stats: SolveStats,
}

/// Lagged-coefficient solver bound to one grid, probability map and model.
#[derive(Debug, Clone)]
pub struct KineticSolver {
    grid: Grid,
    pf: ProbabilityFn,
    params: ModelParams,
    cfg: SolverConfig,
    cells: CellProbabilities,
}

impl KineticSolver {
    /// The probability map is regularized with `cfg.epsilon` first.
    pub fn new(grid: Grid, pf: &ProbabilityFn, params: ModelParams, cfg: SolverConfig) -> Result<Self> {
        if let Some(e) = cfg.validate().into_iter().next() {
            return Err(e);
        }
        let pf = pf.regularize(cfg.epsilon)?;
        let cells = CellProbabilities::new(&grid, &pf)?;
        Ok(Self {
            grid,
            pf,
            params,
            cfg,
            cells,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn pf(&self) -> &ProbabilityFn {
        &self.pf
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn cells(&self) -> &CellProbabilities {
        &self.cells
    }

    fn absorbing(&self) -> bool {
        self.cfg.boundary_mode == BoundaryMode::AbsorbingLedger
    }

    pub fn raw_moments(&self, state: &KineticState) -> (f64, f64) {
        alpha_beta(state, &self.cells, self.grid.dx())
    }

    pub fn coefficients(&self, state: &KineticState) -> Result<CoefficientSet> {
        let mass = state.mass(self.grid.dx());
        if !((mass - 1.0).abs() <= self.cfg.mass_tol) {
            return Err(Error::MassViolation {
                mass,
                tol: self.cfg.mass_tol,
            });
        }
        let (alpha, beta) = self.raw_moments(state);
        Ok(CoefficientSet::from_moments(alpha, beta, &self.params))
    }

    fn weights(&self, coeffs: &CoefficientSet) -> FaceWeights {
        FaceWeights::new(coeffs.c, coeffs.d, self.grid.dx(), self.cfg.theta, self.cfg.advection)
    }

    /// Largest admissible step for these coefficients: `dt_max`, the
    /// advective limit `cfl dx / (|c| max p)` and the positivity limit of the
    /// explicit part.
    pub fn stable_dt(&self, coeffs: &CoefficientSet) -> f64 {
        let dx = self.grid.dx();
        let p_max = self.cells.p_max();
        let mut dt = self.cfg.dt_max;
        let advective = coeffs.c.abs() * p_max;
        if advective > 0.0 {
            dt = dt.min(self.cfg.cfl * dx / advective);
        }
        let (ea, eb) = self.weights(coeffs).explicit;
        let explicit = (ea + eb) * p_max;
        if explicit > 0.0 {
            dt = dt.min(self.cfg.cfl * dx / explicit);
        }
        dt
    }

    /// Advance by `dt` with the given (frozen) coefficients.
    pub fn step(&self, state: &KineticState, coeffs: &CoefficientSet, dt: f64) -> Result<StepOutcome> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::Contract(format!("step size must be finite and >= 0, got {dt}")));
        }
        if !coeffs.c.is_finite() {
            return Err(Error::StepSize { dt, c: coeffs.c });
        }
        if !(coeffs.d >= 0.0 && coeffs.d.is_finite()) {
            return Err(Error::Parabolicity(format!("diffusion coefficient d = {}", coeffs.d)));
        }
        if dt == 0.0 {
            return Ok(StepOutcome {
                state: state.clone(),
                clipped: 0.0,
            });
        }
        let n = self.grid.n_cells();
        let dx = self.grid.dx();
        let r = dt / dx;
        let absorbing = self.absorbing();
        let p = &self.cells.p;
        let w = self.weights(coeffs);

        let g: Vec<f64> = state.f.iter().zip(p).map(|(f, p)| f * p).collect();
        let explicit_flux = face_fluxes(&g, w.explicit, absorbing);
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| state.f[i] - r * (explicit_flux[i + 1] - explicit_flux[i]))
            .collect();

        let (ia, ib) = w.implicit;
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let has_right = i + 1 < n || absorbing;
            let has_left = i > 0 || absorbing;
            if has_right {
                diag[i] += r * ia * p[i];
            }
            if has_left {
                diag[i] += r * ib * p[i];
            }
            if i + 1 < n {
                upper[i] = -r * ib * p[i + 1];
            }
            if i > 0 {
                lower[i] = -r * ia * p[i - 1];
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
        let mut f = rhs;

        let (mut escaped_left, mut escaped_right) = (state.escaped_left, state.escaped_right);
        if absorbing {
            escaped_left += dt * (ib * f[0] * p[0] - explicit_flux[0]);
            escaped_right += dt * (ia * f[n - 1] * p[n - 1] + explicit_flux[n]);
        }

        let clipped = clip_negative(&mut f, dx);
        Ok(StepOutcome {
            state: KineticState {
                f,
                t: state.t + dt,
                escaped_left,
                escaped_right,
            },
            clipped,
        })
    }

    /// Step with lagged coefficients plus `picard_iters` refreshes computed
    /// from the provisional end-of-step density.
    pub fn advance(&self, state: &KineticState, coeffs: &CoefficientSet, dt: f64) -> Result<StepOutcome> {
        let mut outcome = self.step(state, coeffs, dt)?;
        for _ in 0..self.cfg.picard_iters {
            let refreshed = self.coefficients(&outcome.state)?;
            outcome = self.step(state, &refreshed, dt)?;
        }
        Ok(outcome)
    }

    pub fn snapshot(&self, state: &KineticState, coeffs: &CoefficientSet) -> Snapshot {
        let g: Vec<f64> = state.f.iter().zip(&self.cells.p).map(|(f, p)| f * p).collect();
        let mut flux = face_fluxes(&g, self.weights(coeffs).total(), self.absorbing());
        flux.pop();
        Snapshot {
            t: state.t,
            f: state.f.clone(),
            flux_left_face: flux,
            escaped_left: state.escaped_left,
            escaped_right: state.escaped_right,
        }
    }

    /// `sum |D(p f)|^2 dx` over interior faces.
    pub fn grad_energy(&self, state: &KineticState) -> f64 {
        let p = &self.cells.p;
        let mut acc = 0.0;
        for k in 1..state.f.len() {
            let jump = p[k] * state.f[k] - p[k - 1] * state.f[k - 1];
            acc += jump * jump;
        }
        acc / self.grid.dx()
    }

    pub fn record(&self, state: &KineticState, windows: &[f64]) -> MomentRecord {
        moments_with(state, &self.cells, &self.grid, &self.params, windows)
    }

    /// Integrate from `f0` to `opts.t_end`.
    pub fn solve(&self, f0: Vec<f64>, opts: &SolveOptions) -> Result<Solution> {
        let dx = self.grid.dx();
        if f0.len() != self.grid.n_cells() {
            return Err(invalid("f0", "one value per cell required"));
        }
        if f0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid("f0", "initial density must be finite and nonnegative"));
        }
        let mut state = KineticState::new(f0);
        let mass = state.mass(dx);
        if (mass - 1.0).abs() > 1e-10 {
            return Err(invalid("f0", format!("initial mass {mass} is not 1")));
        }
        let (_, beta0) = self.raw_moments(&state);
        if !(beta0 > 0.0) {
            return Err(Error::DegenerateInitialData(format!(
                "beta(0) = {beta0}; diffusion would be degenerate"
            )));
        }
        if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
            return Err(invalid("pde.T", "horizon must be finite and nonnegative"));
        }
        let t_end = opts.t_end;
        let mut record_times = SolveOptions::normalized_times(&opts.record_times, t_end);
        if record_times.first() != Some(&0.0) {
            record_times.insert(0, 0.0);
        }
        if record_times.last() != Some(&t_end) {
            record_times.push(t_end);
        }
        let snapshot_times = SolveOptions::normalized_times(&opts.snapshot_times, t_end);
        let mut targets: Vec<f64> = record_times.iter().chain(&snapshot_times).copied().collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();

        let mut records = Vec::with_capacity(record_times.len());
        let mut snapshots = Vec::with_capacity(snapshot_times.len());
        let mut stats = SolveStats {
            min_value: f64::INFINITY,
            min_dt: f64::INFINITY,
            ..SolveStats::default()
        };
        let (mut next_record, mut next_snapshot) = (0, 0);
        let tol = TIME_EPS * t_end.max(1.0);

        for &target in &targets {
            while target - state.t > tol {
                let coeffs = self.coefficients(&state)?;
                let dt_stable = self.stable_dt(&coeffs);
                if dt_stable < MIN_DT {
                    return Err(Error::StepSize { dt: dt_stable, c: coeffs.c });
                }
                let remaining = target - state.t;
                let dt = if remaining <= dt_stable * (1.0 + 1e-9) {
                    remaining
                } else if remaining < 2.0 * dt_stable {
                    remaining / 2.0
                } else {
                    dt_stable
                };
                let before = state.mass(dx);
                stats.dissipation += coeffs.d * self.grad_energy(&state) * dt;
                let outcome = self.advance(&state, &coeffs, dt)?;
                state = outcome.state;
                if target - state.t <= tol {
                    state.t = target;
                }
                stats.steps += 1;
                stats.clipped_total += outcome.clipped;
                stats.max_clipped_step = stats.max_clipped_step.max(outcome.clipped);
                stats.max_step_mass_drift = stats.max_step_mass_drift.max((state.mass(dx) - before).abs());
                stats.min_dt = stats.min_dt.min(dt);
                stats.max_dt = stats.max_dt.max(dt);
            }
            state.t = target;
            stats.min_value = stats.min_value.min(state.f.iter().cloned().fold(f64::INFINITY, f64::min));
            if next_record < record_times.len() && record_times[next_record] == target {
                let mut rec = self.record(&state, &opts.windows);
                rec.dissipation = stats.dissipation;
                records.push(rec);
                next_record += 1;
            }
            if next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] == target {
                let coeffs = self.coefficients(&state)?;
                snapshots.push(self.snapshot(&state, &coeffs));
                next_snapshot += 1;
            }
        }
        if stats.steps == 0 {
            stats.min_dt = 0.0;
        }
        Ok(Solution {
            series: MomentSeries::new(records, self.params, opts.windows.clone()),
            snapshots,
            final_state: state,
            stats,
        })
    }
}

/// Zero out negative values and rescale the rest so the grid mass is kept.
/// Returns the removed negative mass.
fn clip_negative(f: &mut [f64], dx: f64) -> f64 {
    let negative: f64 = f.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if negative == 0.0 {
        return 0.0;
    }
    let total: f64 = f.iter().sum();
    for v in f.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let positive: f64 = f.iter().sum();
    if positive > 0.0 {
        let scale = total / positive;
        for v in f.iter_mut() {
            *v *= scale;
        }
    }
    negative * dx
}

/// One-shot solve with a fresh [`KineticSolver`].
pub fn solve(
    f0: Vec<f64>,
    grid: Grid,
    pf: &ProbabilityFn,
    params: ModelParams,
    cfg: SolverConfig,
    opts: &SolveOptions,
) -> Result<Solution> {
    KineticSolver::new(grid, pf, params, cfg)?.solve(f0, opts)
}

pub fn regularize_p(pf: &ProbabilityFn, epsilon: f64) -> Result<ProbabilityFn> {
    pf.regularize(epsilon)
}

/// Initial densities shared by the PDE and (via inverse-CDF sampling) the
/// agent simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::Gaussian { mean: 0.0, std: 1.0 }
    }
}

impl InitialDensity {
    pub fn validate(&self) -> Vec<Error> {
        match *self {
            InitialDensity::Gaussian { mean, std } => {
                let mut e = Vec::new();
                if !mean.is_finite() {
                    e.push(invalid("abm.x0.mean", "must be finite"));
                }
                if !(std > 0.0 && std.is_finite()) {
                    e.push(invalid("abm.x0.std", format!("need std > 0, got {std}")));
                }
                e
            }
            InitialDensity::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Vec::new()
                } else {
                    vec![invalid("abm.x0", format!("need lo < hi, got [{lo}, {hi}]"))]
                }
            }
        }
    }

    /// Exact cell averages over the grid, renormalized to unit mass.
    pub fn discretize(&self, grid: &Grid) -> Result<Vec<f64>> {
        let cdf = |x: f64| match *self {
            InitialDensity::Gaussian { mean, std } => {
                0.5 * libm::erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
            }
            InitialDensity::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        };
        let dx = grid.dx();
        let mut f: Vec<f64> = (0..grid.n_cells())
            .map(|i| (cdf(grid.face(i + 1)) - cdf(grid.face(i))).max(0.0) / dx)
            .collect();
        let mass: f64 = f.iter().sum::<f64>() * dx;
        if !(mass > 0.0) {
            return Err(invalid("abm.x0", "initial density has no mass on the grid"));
        }
        for v in &mut f {
            *v /= mass;
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_solver(cfg: SolverConfig) -> KineticSolver {
        let grid = Grid::new(-12.0, 12.0, 800).unwrap();
        let pf = ProbabilityFn::logistic_floor(0.1, 1.0, 0.0).unwrap();
        let params = ModelParams::new(11, 3.0, 0.1, 0.01).unwrap();
        KineticSolver::new(grid, &pf, params, cfg).unwrap()
    }

    fn gaussian(solver: &KineticSolver) -> Vec<f64> {
        InitialDensity::default().discretize(solver.grid()).unwrap()
    }

    #[test]
    fn bernoulli_function() {
        assert_eq!(bernoulli(0.0), 1.0);
        for z in [-50.0, -3.0, -1e-3, 1e-5, 0.7, 40.0, 800.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-9 * z.abs().max(1.0));
            assert!(bernoulli(z) >= 0.0 && bernoulli(-z) > 0.0);
        }
        assert!((bernoulli(1e-4 * 0.99) - 0.99e-4 / (0.99e-4f64).exp_m1()).abs() < 1e-13);
    }

    #[test]
    fn zero_step_is_identity() {
        let s = default_solver(SolverConfig::default());
        let state = KineticState::new(gaussian(&s));
        let coeffs = s.coefficients(&state).unwrap();
        let out = s.step(&state, &coeffs, 0.0).unwrap();
        assert_eq!(out.state, state);
    }

    #[test]
    fn zero_flux_conserves_mass_per_step() {
        for advection in [AdvectionScheme::Fitted, AdvectionScheme::Upwind] {
            for theta in [0.5, 1.0] {
                let s = default_solver(SolverConfig {
                    advection,
                    theta,
                    boundary_mode: BoundaryMode::ZeroFlux,
                    ..SolverConfig::default()
                });
                let mut state = KineticState::new(gaussian(&s));
                let dx = s.grid().dx();
                for _ in 0..50 {
                    let coeffs = s.coefficients(&state).unwrap();
                    let dt = s.stable_dt(&coeffs);
                    let next = s.step(&state, &coeffs, dt).unwrap();
                    assert!((next.state.mass(dx) - state.mass(dx)).abs() < 1e-13);
                    assert!(next.state.f.iter().all(|&v| v >= 0.0));
                    assert_eq!(next.clipped, 0.0);
                    state = next.state;
                }
            }
        }
    }

    #[test]
    fn absorbing_ledger_conserves_total() {
        let s = default_solver(SolverConfig {
            boundary_mode: BoundaryMode::AbsorbingLedger,
            ..SolverConfig::default()
        });
        let grid = Grid::new(-3.0, 3.0, 120).unwrap();
        let s = KineticSolver::new(grid, s.pf(), *s.params(), s.config().clone()).unwrap();
        let mut state = KineticState::new(gaussian(&s));
        let dx = grid.dx();
        let start = state.mass(dx);
        for _ in 0..400 {
            let coeffs = s.coefficients(&state).unwrap();
            let dt = s.stable_dt(&coeffs);
            state = s.step(&state, &coeffs, dt).unwrap().state;
        }
        assert!((state.mass(dx) - start).abs() < 1e-12);
        assert!(state.escaped_left > 1e-4 && state.escaped_right > 1e-4);
    }

    #[test]
    fn coefficient_examples() {
        let s = default_solver(SolverConfig::default());
        let params = *s.params();
        let state = KineticState::new(gaussian(&s));
        let c = s.coefficients(&state).unwrap();
        assert!(c.alpha > 0.1 && c.alpha < 1.0);
        assert!(c.a.abs() < 1.0 && (0.0..=1.0).contains(&c.b));
        assert!(c.b >= c.beta);
        assert!(c.d >= c.parabolicity_floor(&params));
        let m1 = 10.0;
        assert!((c.c - 0.1 * m1 * c.a / 0.01).abs() < 1e-12);

        let mut bad = state.clone();
        bad.f[400] += 1.0;
        assert!(matches!(s.coefficients(&bad), Err(Error::MassViolation { .. })));
    }

    #[test]
    fn step_errors() {
        let s = default_solver(SolverConfig::default());
        let state = KineticState::new(gaussian(&s));
        assert!(matches!(
            s.step(&state, &CoefficientSet::frozen(1.0, -1.0), 0.01),
            Err(Error::Parabolicity(_))
        ));
        assert!(matches!(
            s.step(&state, &CoefficientSet::frozen(f64::INFINITY, 1.0), 0.01),
            Err(Error::StepSize { .. })
        ));
        assert!(s.step(&state, &CoefficientSet::frozen(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn solve_rejects_degenerate_data() {
        let grid = Grid::new(-4.0, 4.0, 64).unwrap();
        let pf = ProbabilityFn::constant(1.0).unwrap();
        let params = ModelParams::new(11, 3.0, 0.1, 0.01).unwrap();
        let s = KineticSolver::new(grid, &pf, params, SolverConfig::default()).unwrap();
        let f0 = InitialDensity::default().discretize(&grid).unwrap();
        assert!(matches!(
            s.solve(f0, &SolveOptions::uniform(1.0, 0.1, vec![1.0])),
            Err(Error::DegenerateInitialData(_))
        ));
    }

    #[test]
    fn zero_horizon_returns_initial_record() {
        let s = default_solver(SolverConfig::default());
        let f0 = gaussian(&s);
        let sol = s.solve(f0.clone(), &SolveOptions::uniform(0.0, 0.1, vec![1.0])).unwrap();
        assert_eq!(sol.series.records.len(), 1);
        assert_eq!(sol.final_state.f, f0);
        assert_eq!(sol.stats.steps, 0);
    }

    #[test]
    fn gaussian_discretization() {
        let grid = Grid::new(-6.0, 6.0, 600).unwrap();
        let f = InitialDensity::default().discretize(&grid).unwrap();
        let mass: f64 = f.iter().sum::<f64>() * grid.dx();
        assert!((mass - 1.0).abs() < 1e-14);
        let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((f[300] - peak).abs() < 1e-4);
        let u = InitialDensity::Uniform { lo: -1.0, hi: 1.0 }.discretize(&grid).unwrap();
        assert!((u[300] - 0.5).abs() < 1e-12);
        assert_eq!(u[0], 0.0);
    }
}
