//! Moment functionals of kinetic densities and the checks run against them.

use crate::error::Result;
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::pde::{CellProbabilities, KineticState};
use crate::prob::ProbabilityFn;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub t: f64,
    pub mass: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// `sum p f^2 dx`
    pub energy: f64,
    /// `sum |D(p f)|^2 dx` over interior faces.
    pub grad_energy: f64,
    /// `beta * (sum p^2 f^2 dx)^3`
    pub phi: f64,
    /// Mass in `(-R, R)` for each configured `R`.
    pub sorting: Vec<f64>,
    pub bmass_left: f64,
    pub bmass_right: f64,
    /// Running sum of `d G dt` over solver steps up to `t`. Not written to CSV.
    pub dissipation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub records: Vec<MomentRecord>,
    pub params: ModelParams,
    pub windows: Vec<f64>,
    /// Free-form key/value provenance (config hash, seeds, ...).
    pub provenance: Vec<(String, String)>,
}

impl MomentSeries {
    pub fn new(records: Vec<MomentRecord>, params: ModelParams, windows: Vec<f64>) -> Self {
        Self {
            records,
            params,
            windows,
            provenance: Vec::new(),
        }
    }

    pub fn first(&self) -> Option<&MomentRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&MomentRecord> {
        self.records.last()
    }

    pub fn horizon(&self) -> f64 {
        self.last().map_or(0.0, |r| r.t)
    }

    /// Replace the running dissipation by the left-endpoint sum over the
    /// records themselves, for series that did not come out of a solve.
    pub fn dissipation_from_records(&mut self) {
        let mut acc = 0.0;
        for k in 0..self.records.len() {
            if k > 0 {
                let prev = &self.records[k - 1];
                acc += prev.d * prev.grad_energy * (self.records[k].t - prev.t);
            }
            self.records[k].dissipation = acc;
        }
    }

    /// Records with `t >= (1 - fraction) * horizon`.
    pub fn trailing(&self, fraction: f64) -> &[MomentRecord] {
        let start = (1.0 - fraction) * self.horizon();
        let k = self.records.partition_point(|r| r.t < start);
        &self.records[k..]
    }
}

/// `alpha` and `beta` by midpoint quadrature plus the escaped ledger, which
/// counts with `p = 1` on the right and `p(x_min)` on the left.
pub fn alpha_beta(state: &KineticState, cells: &CellProbabilities, dx: f64) -> (f64, f64) {
    let (mut alpha, mut beta) = (0.0, 0.0);
    for ((&f, &p), &q) in state.f.iter().zip(&cells.p).zip(&cells.q) {
        alpha += p * f;
        beta += p * q * f;
    }
    alpha = alpha * dx + state.escaped_right + state.escaped_left * cells.p_left_end;
    beta = beta * dx + state.escaped_left * cells.p_left_end * cells.q_left_end;
    (alpha, beta)
}

pub fn moments(
    state: &KineticState,
    grid: &Grid,
    pf: &ProbabilityFn,
    params: &ModelParams,
    windows: &[f64],
) -> Result<MomentRecord> {
    let cells = CellProbabilities::new(grid, pf)?;
    Ok(moments_with(state, &cells, grid, params, windows))
}

/// [`moments`] with `p` already tabulated on the cells.
pub fn moments_with(
    state: &KineticState,
    cells: &CellProbabilities,
    grid: &Grid,
    params: &ModelParams,
    windows: &[f64],
) -> MomentRecord {
    let dx = grid.dx();
    let n = state.f.len();
    let (alpha, beta) = alpha_beta(state, cells, dx);
    let coeffs = crate::pde::CoefficientSet::from_moments(alpha, beta, params);
    let (mut energy, mut p2f2) = (0.0, 0.0);
    for (&f, &p) in state.f.iter().zip(&cells.p) {
        energy += p * f * f;
        p2f2 += p * p * f * f;
    }
    energy *= dx;
    p2f2 *= dx;
    let mut grad_energy = 0.0;
    for k in 1..n {
        let jump = cells.p[k] * state.f[k] - cells.p[k - 1] * state.f[k - 1];
        grad_energy += jump * jump;
    }
    grad_energy /= dx;
    let sorting = windows
        .iter()
        .map(|&r| (0..n).map(|i| state.f[i] * grid.overlap(i, r)).sum())
        .collect();
    MomentRecord {
        t: state.t,
        mass: state.mass(dx),
        alpha,
        beta,
        a: coeffs.a,
        b: coeffs.b,
        c: coeffs.c,
        d: coeffs.d,
        energy,
        grad_energy,
        phi: beta * p2f2.powi(3),
        sorting,
        bmass_left: state.f[0] * dx + state.escaped_left,
        bmass_right: state.f[n - 1] * dx + state.escaped_right,
        dissipation: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub e0: f64,
    /// `max_k (E_k + D_k - E_0)^+ / E_0` with `D_k` the running dissipation.
    pub max_violation: f64,
    /// Records where the relative excess is above `tol`, as `(t, excess)`.
    pub violations: Vec<(f64, f64)>,
    pub tol: f64,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Discrete energy inequality `E(t_k) + sum_{j<k} d(t_j) G(t_j) dt_j <= E(0) (1 + tol)`,
/// the sum running over solver steps (see [`MomentRecord::dissipation`]).
pub fn check_energy_inequality(series: &MomentSeries, tol: f64) -> EnergyReport {
    let Some(first) = series.first() else {
        return EnergyReport {
            e0: f64::NAN,
            max_violation: 0.0,
            violations: Vec::new(),
            tol,
        };
    };
    let e0 = first.energy;
    let mut max_violation: f64 = 0.0;
    let mut violations = Vec::new();
    for r in &series.records {
        let excess = ((r.energy + r.dissipation - first.dissipation - e0) / e0).max(0.0);
        max_violation = max_violation.max(excess);
        if excess > tol {
            violations.push((r.t, excess));
        }
    }
    EnergyReport {
        e0,
        max_violation,
        violations,
        tol,
    }
}

/// `c0 = (1 + 2 c_p) c_p (sup|c| + sup d)` over the series, with its formula.
///
/// Integrating `alpha' = int p (-c g_x + d g_xx)` by parts and using the
/// derivative bounds on `p` gives `|alpha'| <= c_p (|c| + d) beta` and
/// `|beta'| <= (c_p |c| + (c_p + 2 c_p^2) d) beta`; both are covered.
pub fn assemble_c0(series: &MomentSeries, c_p: f64) -> (f64, String) {
    let sup_c = series.records.iter().map(|r| r.c.abs()).fold(0.0, f64::max);
    let sup_d = series.records.iter().map(|r| r.d).fold(0.0, f64::max);
    let c0 = (1.0 + 2.0 * c_p) * c_p * (sup_c + sup_d);
    let formula = format!(
        "c0 = (1 + 2 c_p) * c_p * (sup|c| + sup d) = (1 + 2*{c_p}) * {c_p} * ({sup_c} + {sup_d}) = {c0}"
    );
    (c0, formula)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub c0: f64,
    pub formula: String,
    /// `(t_k, |delta alpha| / allowance)` for each failing interval.
    pub alpha_violations: Vec<(f64, f64)>,
    pub beta_violations: Vec<(f64, f64)>,
    /// `(t, beta(t) / (beta(0) e^{-c0 t}))` where that ratio drops below `1 - tol`.
    pub lower_bound_violations: Vec<(f64, f64)>,
    pub max_alpha_ratio: f64,
    pub max_beta_ratio: f64,
    pub min_lower_bound_ratio: f64,
    /// `|delta alpha| / (dt c0 max(beta_k, beta_k+1))`; informational, since
    /// the rigorous allowance above grows like `e^{c0 dt}` on coarse records.
    pub max_fd_alpha_ratio: f64,
    pub max_fd_beta_ratio: f64,
    /// `true` when there were too few records to check anything.
    pub inconclusive: bool,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        !self.inconclusive
            && self.alpha_violations.is_empty()
            && self.beta_violations.is_empty()
            && self.lower_bound_violations.is_empty()
    }
}

/// Check `|alpha'|, |beta'| <= c0 beta` and `beta(t) >= beta(0) e^{-c0 t}`.
///
/// Between records the derivative bounds integrate to
/// `|delta alpha| <= c0 dt beta_k e^{c0 dt}`, which is what is tested (with
/// relative slack `tol` and an absolute floor for rounding).
pub fn check_moment_bounds(series: &MomentSeries, c0: f64, formula: String, tol: f64) -> BoundsReport {
    let mut report = BoundsReport {
        c0,
        formula,
        alpha_violations: Vec::new(),
        beta_violations: Vec::new(),
        lower_bound_violations: Vec::new(),
        max_alpha_ratio: 0.0,
        max_beta_ratio: 0.0,
        min_lower_bound_ratio: f64::INFINITY,
        max_fd_alpha_ratio: 0.0,
        max_fd_beta_ratio: 0.0,
        inconclusive: series.records.len() < 3,
    };
    if report.inconclusive {
        return report;
    }
    let rounding = 1e-13;
    for w in series.records.windows(2) {
        let (r0, r1) = (&w[0], &w[1]);
        let dt = r1.t - r0.t;
        let allowance = c0 * dt * r0.beta * (c0 * dt).exp() * (1.0 + tol) + rounding;
        let ra = (r1.alpha - r0.alpha).abs() / allowance;
        let rb = (r1.beta - r0.beta).abs() / allowance;
        report.max_alpha_ratio = report.max_alpha_ratio.max(ra);
        report.max_beta_ratio = report.max_beta_ratio.max(rb);
        let slope_cap = c0 * dt * r0.beta.max(r1.beta);
        if slope_cap > 0.0 {
            report.max_fd_alpha_ratio = report.max_fd_alpha_ratio.max((r1.alpha - r0.alpha).abs() / slope_cap);
            report.max_fd_beta_ratio = report.max_fd_beta_ratio.max((r1.beta - r0.beta).abs() / slope_cap);
        }
        if ra > 1.0 {
            report.alpha_violations.push((r0.t, ra));
        }
        if rb > 1.0 {
            report.beta_violations.push((r0.t, rb));
        }
    }
    let first = &series.records[0];
    for r in &series.records {
        let floor = first.beta * (-c0 * (r.t - first.t)).exp();
        let ratio = if floor > 0.0 { r.beta / floor } else { f64::INFINITY };
        report.min_lower_bound_ratio = report.min_lower_bound_ratio.min(ratio);
        if ratio < 1.0 - tol {
            report.lower_bound_violations.push((r.t, ratio));
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimescaleReport {
    pub transport_rate: f64,
    pub diffusion_rate: f64,
    pub ratio: f64,
    pub t_learn: f64,
    pub t_sort: f64,
}

/// Rates `h (M-1) / tau` and `h^2 (M-1) / (2 tau)` and horizons `C_T / rate`.
pub fn timescale_report(params: &ModelParams, c_t: f64) -> TimescaleReport {
    let m1 = params.agents() as f64 - 1.0;
    let transport_rate = params.h() * m1 / params.tau();
    let diffusion_rate = params.h() * params.h() * m1 / (2.0 * params.tau());
    TimescaleReport {
        transport_rate,
        diffusion_rate,
        ratio: 2.0 / params.h(),
        t_learn: c_t / transport_rate,
        t_sort: c_t / diffusion_rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Not enough data to decide.
    Inconclusive,
    /// The claim is conditional and its condition does not hold.
    NotAsserted,
}

impl CheckStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Inconclusive => "inconclusive",
            CheckStatus::NotAsserted => "not_asserted",
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictConfig {
    pub phi_frac: f64,
    pub sorting_tol: f64,
    /// Surrogate for the non-constructive constant in the learning bound.
    pub bound_factor: f64,
    pub trailing_fraction: f64,
    pub c_t: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self {
            phi_frac: 0.1,
            sorting_tol: 0.05,
            bound_factor: 5e-5,
            trailing_fraction: 0.25,
            c_t: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsReport {
    pub checks: Vec<Check>,
    pub timescales: TimescaleReport,
}

impl AsymptoticsReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// No check failed (inconclusive and not-asserted checks do not count).
    pub fn no_failures(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }
}

const MIN_VERDICT_RECORDS: usize = 8;

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    s / n as f64
}

/// The five long-time checks: phi decay, sorting, alpha in the Nash band,
/// the (surrogate) bound on |a|, and the (surrogate) regime condition.
pub fn sorting_and_learning_verdict(
    series: &MomentSeries,
    params: &ModelParams,
    pf: &ProbabilityFn,
    cfg: &VerdictConfig,
) -> AsymptoticsReport {
    let timescales = timescale_report(params, cfg.c_t);
    let p_min = pf.p_min();
    let m1 = params.agents() as f64 - 1.0;
    let surrogate = cfg.bound_factor * params.tau().sqrt();
    let regime_lhs = surrogate * m1;
    let regime_rhs = p_min.powi(4);
    let regime_holds = regime_lhs < regime_rhs;
    let regime = Check {
        name: "regime",
        status: CheckStatus::from_bool(regime_holds),
        detail: format!("surrogate bound_factor*sqrt(tau)*(M-1) = {regime_lhs:e} vs p_min^4 = {regime_rhs:e}"),
    };

    let horizon = series.horizon();
    let too_short = series.records.len() < MIN_VERDICT_RECORDS || horizon < timescales.t_sort;
    if too_short {
        let detail = format!(
            "series too short: {} records up to t = {horizon}, sorting time {}",
            series.records.len(),
            timescales.t_sort
        );
        let mut checks: Vec<Check> = ["phi_decay", "sorting", "alpha_band", "a_bound"]
            .into_iter()
            .map(|name| Check {
                name,
                status: CheckStatus::Inconclusive,
                detail: detail.clone(),
            })
            .collect();
        checks.push(regime);
        return AsymptoticsReport { checks, timescales };
    }

    let first = series.first().expect("non-empty");
    let last = series.last().expect("non-empty");
    let trailing = series.trailing(cfg.trailing_fraction);

    let phi_ratio = last.phi / first.phi;
    let half = trailing.len() / 2;
    let early = mean(trailing[..half.max(1)].iter().map(|r| r.phi));
    let late = mean(trailing[half..].iter().map(|r| r.phi));
    let phi_ok = phi_ratio <= cfg.phi_frac && late <= early;
    let phi_decay = Check {
        name: "phi_decay",
        status: CheckStatus::from_bool(phi_ok),
        detail: format!(
            "phi(T)/phi(0) = {phi_ratio:e} (limit {}); trailing window means {early:e} -> {late:e}",
            cfg.phi_frac
        ),
    };

    let trailing_half = series.trailing(0.5);
    let span = horizon - trailing_half.first().map_or(horizon, |r| r.t);
    // a rise far below the tolerance is not a trend
    let max_rise = 1e-3 * cfg.sorting_tol;
    let mut sorting_ok = true;
    let mut parts = Vec::new();
    for (w, &r) in series.windows.iter().enumerate() {
        let value = last.sorting[w];
        let s = slope(&trailing_half.iter().map(|rec| (rec.t, rec.sorting[w])).collect::<Vec<_>>());
        sorting_ok &= value <= cfg.sorting_tol && s * span <= max_rise;
        parts.push(format!("R={r}: {value:e} (slope {s:e})"));
    }
    let sorting = Check {
        name: "sorting",
        status: CheckStatus::from_bool(sorting_ok),
        detail: format!("limit {}; {}", cfg.sorting_tol, parts.join(", ")),
    };

    let (lo, hi) = params.learning_band();
    let a_min = trailing.iter().map(|r| r.alpha).fold(f64::INFINITY, f64::min);
    let a_max = trailing.iter().map(|r| r.alpha).fold(f64::NEG_INFINITY, f64::max);
    let alpha_band = Check {
        name: "alpha_band",
        status: CheckStatus::from_bool(a_min > lo && a_max < hi),
        detail: format!("trailing alpha in [{a_min}, {a_max}], band ({lo}, {hi})"),
    };

    let bound = surrogate / p_min.powi(4);
    let sup_a = trailing.iter().map(|r| r.a.abs()).fold(0.0, f64::max);
    let a_bound = Check {
        name: "a_bound",
        status: if regime_holds {
            CheckStatus::from_bool(sup_a <= bound)
        } else {
            CheckStatus::NotAsserted
        },
        detail: format!("surrogate bound: trailing sup|a| = {sup_a:e} vs bound_factor*sqrt(tau)/p_min^4 = {bound:e}"),
    };

    AsymptoticsReport {
        checks: vec![phi_decay, sorting, alpha_band, a_bound, regime],
        timescales,
    }
}
