//! Agent-based simulation of the stochastic reinforcement rule.
//!
//! Each round agent `i` enters with probability `p(x_i)`; with `m` entrants,
//! every entrant moves its propensity by `h (Mc - m)` and everybody else keeps
//! theirs. Rounds happen at times `t_n = tau * n`.
//!
//! Random numbers: one `f64` per agent per round, drawn in agent order from a
//! ChaCha8 stream; agent `i` enters iff its draw is below `p(x_i)`. Replica
//! `r` of an ensemble uses the stream `r` of a generator seeded with the base
//! seed (see [`replica_rng`]), and draws its initial propensities from that
//! stream before the first round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::prob::ProbabilityFn;

pub type AgentRng = ChaCha8Rng;

/// Generator for replica `replica` of an ensemble seeded with `base_seed`.
pub fn replica_rng(base_seed: u64, replica: u64) -> AgentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone)]
pub struct AgentEnsembleState {
    x: Vec<f64>,
    n: u64,
    rng: AgentRng,
}

impl AgentEnsembleState {
    pub fn new(x0: Vec<f64>, rng: AgentRng) -> Self {
        Self { x: x0, n: 0, rng }
    }

    pub fn from_seed(x0: Vec<f64>, seed: u64) -> Self {
        Self::new(x0, replica_rng(seed, 0))
    }

    pub fn propensities(&self) -> &[f64] {
        &self.x
    }

    pub fn round(&self) -> u64 {
        self.n
    }

    pub fn rng(&self) -> &AgentRng {
        &self.rng
    }
}

/// Apply one round with given entry decisions; returns the entrant count.
pub fn apply_round(x: &mut [f64], entered: &[bool], params: &ModelParams) -> usize {
    debug_assert_eq!(x.len(), entered.len());
    let m = entered.iter().filter(|&&e| e).count();
    let shift = params.h() * (params.capacity() - m as f64);
    for (xi, &e) in x.iter_mut().zip(entered) {
        if e {
            *xi += shift;
        }
    }
    m
}

/// Draw entry decisions for every agent and apply the update.
pub fn step_round(
    state: &mut AgentEnsembleState,
    params: &ModelParams,
    pf: &ProbabilityFn,
) -> Result<usize> {
    let mut entered = Vec::with_capacity(state.x.len());
    for &xi in &state.x {
        let p = pf.value(xi)?;
        let u: f64 = state.rng.random();
        entered.push(u < p);
    }
    let m = apply_round(&mut state.x, &entered, params);
    state.n += 1;
    Ok(m)
}

/// Rounds at which records are written. Always contains round 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSchedule(Vec<u64>);

impl RecordSchedule {
    pub fn every(stride: u64, rounds: u64) -> Self {
        let stride = stride.max(1);
        let mut v: Vec<u64> = (0..=rounds).step_by(stride as usize).collect();
        if v.last() != Some(&rounds) {
            v.push(rounds);
        }
        Self(v)
    }

    /// Every round up to `dense`, then rounds growing by `ratio`.
    pub fn geometric(rounds: u64, dense: u64, ratio: f64) -> Self {
        let ratio = ratio.max(1.0 + 1e-9);
        let mut v: Vec<u64> = (0..=dense.min(rounds)).collect();
        let mut next = dense.max(1) as f64;
        loop {
            next *= ratio;
            let n = next.round() as u64;
            if n >= rounds {
                break;
            }
            if n > *v.last().unwrap() {
                v.push(n);
            }
        }
        if *v.last().unwrap() != rounds {
            v.push(rounds);
        }
        Self(v)
    }

    pub fn explicit(mut rounds: Vec<u64>) -> Self {
        rounds.push(0);
        rounds.sort_unstable();
        rounds.dedup();
        Self(rounds)
    }

    pub fn rounds(&self) -> &[u64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOptions {
    pub schedule: RecordSchedule,
    /// Half-widths `R` of the sorting windows `(-R, R)`.
    pub windows: Vec<f64>,
    /// Rounds at which full propensity vectors are kept.
    pub snapshot_rounds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmRecord {
    pub n: u64,
    pub t: f64,
    /// Entrants in the round that produced this state; `None` at `n = 0`.
    pub m: Option<usize>,
    pub alpha_hat: f64,
    pub a_hat: f64,
    pub sorting: Vec<f64>,
}

/// Output of a single replica.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmSeries {
    pub records: Vec<AbmRecord>,
    pub snapshots: Vec<(u64, Vec<f64>)>,
}

fn record(
    x: &[f64],
    n: u64,
    m: Option<usize>,
    params: &ModelParams,
    pf: &ProbabilityFn,
    windows: &[f64],
) -> Result<AbmRecord> {
    let mut alpha = 0.0;
    for &xi in x {
        alpha += pf.value(xi)?;
    }
    alpha /= x.len() as f64;
    let sorting = windows
        .iter()
        .map(|&r| sorting_fraction(x, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(AbmRecord {
        n,
        t: params.tau() * n as f64,
        m,
        alpha_hat: alpha,
        a_hat: params.kappa() - alpha,
        sorting,
    })
}

/// Play `rounds` rounds from `x0` using the generator `rng`.
pub fn run_with_rng(
    x0: Vec<f64>,
    rng: AgentRng,
    rounds: u64,
    params: &ModelParams,
    pf: &ProbabilityFn,
    opts: &RecordOptions,
) -> Result<AbmSeries> {
    if x0.len() != params.agents() {
        return Err(invalid(
            "x0",
            format!("expected {} propensities, got {}", params.agents(), x0.len()),
        ));
    }
    if opts.windows.iter().any(|&r| !(r > 0.0)) {
        return Err(invalid("abm.windows", "sorting windows must be positive"));
    }
    let mut state = AgentEnsembleState::new(x0, rng);
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let schedule = opts.schedule.rounds();
    let mut next_record = 0;
    let mut last_m = None;
    loop {
        let n = state.n;
        while next_record < schedule.len() && schedule[next_record] < n {
            next_record += 1;
        }
        if next_record < schedule.len() && schedule[next_record] == n {
            records.push(record(&state.x, n, last_m, params, pf, &opts.windows)?);
        }
        if opts.snapshot_rounds.contains(&n) {
            snapshots.push((n, state.x.clone()));
        }
        if n >= rounds {
            break;
        }
        last_m = Some(step_round(&mut state, params, pf)?);
    }
    if records.last().map(|r| r.n) != Some(rounds) {
        records.push(record(&state.x, rounds, last_m, params, pf, &opts.windows)?);
    }
    Ok(AbmSeries { records, snapshots })
}

/// Single replica seeded with `seed` (stream 0).
pub fn run_trajectory(
    x0: Vec<f64>,
    rounds: u64,
    params: &ModelParams,
    pf: &ProbabilityFn,
    seed: u64,
    opts: &RecordOptions,
) -> Result<AbmSeries> {
    run_with_rng(x0, replica_rng(seed, 0), rounds, params, pf, opts)
}

/// Source of initial propensities for one replica.
pub trait InitialSampler: Sync {
    fn sample(&self, rng: &mut AgentRng, agents: usize) -> Vec<f64>;
}

impl<F> InitialSampler for F
where
    F: Fn(&mut AgentRng, usize) -> Vec<f64> + Sync,
{
    fn sample(&self, rng: &mut AgentRng, agents: usize) -> Vec<f64> {
        self(rng, agents)
    }
}

/// Inverse-CDF sampling from a piecewise-constant density on a grid.
#[derive(Debug, Clone)]
pub struct InverseCdfSampler {
    grid: Grid,
    cdf: Vec<f64>,
}

impl InverseCdfSampler {
    pub fn new(grid: Grid, density: &[f64]) -> Result<Self> {
        if density.len() != grid.n_cells() || density.iter().any(|&f| !(f >= 0.0)) {
            return Err(invalid("x0", "density must be nonnegative with one value per cell"));
        }
        let mut cdf = Vec::with_capacity(density.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &f in density {
            acc += f * grid.dx();
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(invalid("x0", "density has zero mass"));
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(Self { grid, cdf })
    }

    pub fn draw(&self, u: f64) -> f64 {
        // first face whose cdf exceeds u
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.grid.n_cells());
        let (lo, hi) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        self.grid.face(k - 1) + frac.clamp(0.0, 1.0) * self.grid.dx()
    }
}

impl InitialSampler for InverseCdfSampler {
    fn sample(&self, rng: &mut AgentRng, agents: usize) -> Vec<f64> {
        (0..agents).map(|_| self.draw(rng.random())).collect()
    }
}

/// Mean and standard error over replicas of one recorded round.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub n: u64,
    pub t: f64,
    pub m_mean: f64,
    pub m_se: f64,
    pub alpha_hat_mean: f64,
    pub alpha_hat_se: f64,
    pub a_hat_mean: f64,
    pub a_hat_se: f64,
    pub sorting_mean: Vec<f64>,
    pub sorting_se: Vec<f64>,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    pub records: Vec<AggregateRecord>,
    /// Propensities pooled over replicas (in replica order) per snapshot round.
    pub snapshots: Vec<(u64, Vec<f64>)>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Run replica `replica` of an ensemble.
#[allow(clippy::too_many_arguments)]
pub fn run_replica(
    replica: u64,
    base_seed: u64,
    sampler: &dyn InitialSampler,
    rounds: u64,
    params: &ModelParams,
    pf: &ProbabilityFn,
    opts: &RecordOptions,
) -> Result<AbmSeries> {
    let mut rng = replica_rng(base_seed, replica);
    let x0 = sampler.sample(&mut rng, params.agents());
    run_with_rng(x0, rng, rounds, params, pf, opts)
}

/// Reduce replica outputs in replica-index order, whatever order they
/// arrive in.
pub fn aggregate(mut replicas: Vec<(u64, AbmSeries)>) -> Result<EnsembleSeries> {
    if replicas.is_empty() {
        return Err(invalid("abm.replicas", "need at least one replica"));
    }
    replicas.sort_by_key(|(r, _)| *r);
    let count = replicas.len();
    let first = &replicas[0].1;
    let windows = first.records.first().map_or(0, |r| r.sorting.len());
    let mut records = Vec::with_capacity(first.records.len());
    for (k, proto) in first.records.iter().enumerate() {
        let column = |f: &dyn Fn(&AbmRecord) -> f64| -> Vec<f64> {
            replicas.iter().map(|(_, s)| f(&s.records[k])).collect()
        };
        let m_values: Vec<f64> = replicas
            .iter()
            .filter_map(|(_, s)| s.records[k].m.map(|m| m as f64))
            .collect();
        let (m_mean, m_se) = mean_se(&m_values);
        let (alpha_hat_mean, alpha_hat_se) = mean_se(&column(&|r| r.alpha_hat));
        let (a_hat_mean, a_hat_se) = mean_se(&column(&|r| r.a_hat));
        let (sorting_mean, sorting_se) = (0..windows)
            .map(|w| mean_se(&column(&|r| r.sorting[w])))
            .unzip();
        records.push(AggregateRecord {
            n: proto.n,
            t: proto.t,
            m_mean,
            m_se,
            alpha_hat_mean,
            alpha_hat_se,
            a_hat_mean,
            a_hat_se,
            sorting_mean,
            sorting_se,
            replicas: count,
        });
    }
    let snapshots = first
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, (n, _))| {
            let pooled = replicas
                .iter()
                .flat_map(|(_, s)| s.snapshots[k].1.iter().copied())
                .collect();
            (*n, pooled)
        })
        .collect();
    Ok(EnsembleSeries { records, snapshots })
}

/// Run `replicas` independent replicas (in parallel) and aggregate them.
pub fn ensemble_run(
    replicas: usize,
    base_seed: u64,
    sampler: &dyn InitialSampler,
    rounds: u64,
    params: &ModelParams,
    pf: &ProbabilityFn,
    opts: &RecordOptions,
) -> Result<EnsembleSeries> {
    if replicas == 0 {
        return Err(invalid("abm.replicas", "need at least one replica"));
    }
    let outputs = (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(r, base_seed, sampler, rounds, params, pf, opts).map(|s| (r, s)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(outputs)
}

/// Histogram of a propensity sample as a cell-averaged density.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDensity {
    pub f: Vec<f64>,
    pub left: f64,
    pub right: f64,
}

/// Normalized so that `sum(f) * dx` is the in-range fraction; the fractions
/// below `x_min` and at or above `x_max` are reported separately.
pub fn empirical_density(xs: &[f64], grid: &Grid) -> EmpiricalDensity {
    let mut counts = vec![0usize; grid.n_cells()];
    let (mut left, mut right) = (0usize, 0usize);
    for &x in xs {
        match grid.locate(x) {
            Some(i) => counts[i] += 1,
            None if x < grid.x_min() => left += 1,
            None => right += 1,
        }
    }
    if xs.is_empty() {
        return EmpiricalDensity {
            f: vec![0.0; grid.n_cells()],
            left: 0.0,
            right: 0.0,
        };
    }
    let total = xs.len() as f64;
    let scale = 1.0 / (total * grid.dx());
    EmpiricalDensity {
        f: counts.iter().map(|&c| c as f64 * scale).collect(),
        left: left as f64 / total,
        right: right as f64 / total,
    }
}

/// Fraction of agents with propensity in `(-r, r)`.
pub fn sorting_fraction(xs: &[f64], r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid("R", format!("window half-width must be positive, got {r}")));
    }
    if xs.is_empty() {
        return Ok(0.0);
    }
    let inside = xs.iter().filter(|x| x.abs() < r).count();
    Ok(inside as f64 / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(3, 2.0, 0.1, 0.01).unwrap()
    }

    #[test]
    fn rigged_rounds() {
        let p = params();
        let mut x = vec![0.0; 3];
        assert_eq!(apply_round(&mut x, &[true, true, false], &p), 2);
        assert_eq!(x, vec![0.0, 0.0, 0.0]);
        assert_eq!(apply_round(&mut x, &[true, false, false], &p), 1);
        assert!((x[0] - 0.1).abs() < 1e-15);
        assert_eq!(&x[1..], &[0.0, 0.0]);
        let before = x.clone();
        assert_eq!(apply_round(&mut x, &[false, false, false], &p), 0);
        assert_eq!(x, before);
    }

    #[test]
    fn step_consumes_one_draw_per_agent() {
        let p = ModelParams::new(7, 3.0, 0.1, 0.01).unwrap();
        let pf = ProbabilityFn::logistic_floor(0.1, 1.0, 0.0).unwrap();
        let mut state = AgentEnsembleState::from_seed(vec![0.0; 7], 42);
        let mut shadow = state.rng().clone();
        let draws: Vec<f64> = (0..7).map(|_| shadow.random()).collect();
        let m = step_round(&mut state, &p, &pf).unwrap();
        assert_eq!(m, draws.iter().filter(|&&u| u < 0.55).count());
        assert_eq!(state.rng().clone().random::<u64>(), shadow.random::<u64>());
        assert_eq!(state.round(), 1);
    }

    #[test]
    fn zero_rounds_gives_initial_record() {
        let p = params();
        let pf = ProbabilityFn::logistic_floor(0.1, 1.0, 0.0).unwrap();
        let opts = RecordOptions {
            schedule: RecordSchedule::every(1, 0),
            windows: vec![1.0],
            snapshot_rounds: vec![],
        };
        let s = run_trajectory(vec![0.0, 1.0, -1.0], 0, &p, &pf, 1, &opts).unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.records[0].n, 0);
        assert_eq!(s.records[0].m, None);
        assert_eq!(s.records[0].sorting, vec![1.0 / 3.0]);
    }

    #[test]
    fn schedules() {
        assert_eq!(RecordSchedule::every(3, 7).rounds(), &[0, 3, 6, 7]);
        let g = RecordSchedule::geometric(10_000, 10, 1.5);
        assert_eq!(&g.rounds()[..11], &(0..=10).collect::<Vec<_>>()[..]);
        assert_eq!(*g.rounds().last().unwrap(), 10_000);
        assert!(g.rounds().windows(2).all(|w| w[1] > w[0]));
        assert!(g.rounds().len() < 40);
        assert_eq!(RecordSchedule::explicit(vec![5, 2, 5]).rounds(), &[0, 2, 5]);
    }

    #[test]
    fn density_normalization() {
        let g = Grid::new(-1.0, 1.0, 20).unwrap();
        let d = empirical_density(&[0.05, 0.06, 0.07], &g);
        assert!((d.f[10] - 1.0 / g.dx()).abs() < 1e-12);
        assert_eq!(d.f.iter().filter(|&&v| v != 0.0).count(), 1);
        let d = empirical_density(&[-3.0, 5.0, 1.0], &g);
        assert!(d.f.iter().all(|&v| v == 0.0));
        assert!((d.left + d.right - 1.0).abs() < 1e-15);
        assert!((d.left - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sorting_examples() {
        assert_eq!(sorting_fraction(&[0.0; 5], 1.0).unwrap(), 1.0);
        assert_eq!(sorting_fraction(&[2.0, -2.0, 2.0], 1.0).unwrap(), 0.0);
        assert!(sorting_fraction(&[0.0], 0.0).is_err());
    }

    #[test]
    fn inverse_cdf_sampler_stays_on_support() {
        let g = Grid::new(-2.0, 2.0, 16).unwrap();
        let mut dens = vec![0.0; 16];
        dens[3] = 1.0;
        dens[12] = 3.0;
        let s = InverseCdfSampler::new(g, &dens).unwrap();
        let mut rng = replica_rng(3, 0);
        let xs = s.sample(&mut rng, 4000);
        let in3 = xs.iter().filter(|&&x| g.locate(x) == Some(3)).count();
        let in12 = xs.iter().filter(|&&x| g.locate(x) == Some(12)).count();
        assert_eq!(in3 + in12, 4000);
        assert!((in12 as f64 / 4000.0 - 0.75).abs() < 0.03);
        assert!(InverseCdfSampler::new(g, &[0.0; 16]).is_err());
    }

    #[test]
    fn single_replica_has_zero_standard_error() {
        let p = ModelParams::new(11, 3.0, 0.1, 0.01).unwrap();
        let pf = ProbabilityFn::logistic_floor(0.1, 1.0, 0.0).unwrap();
        let opts = RecordOptions {
            schedule: RecordSchedule::every(10, 50),
            windows: vec![1.0],
            snapshot_rounds: vec![50],
        };
        let sampler = |rng: &mut AgentRng, m: usize| -> Vec<f64> {
            (0..m).map(|_| rng.random::<f64>() - 0.5).collect()
        };
        let e = ensemble_run(1, 9, &sampler, 50, &p, &pf, &opts).unwrap();
        let single = run_replica(0, 9, &sampler, 50, &p, &pf, &opts).unwrap();
        for (agg, rec) in e.records.iter().zip(&single.records) {
            assert_eq!(agg.alpha_hat_mean, rec.alpha_hat);
            assert_eq!(agg.alpha_hat_se, 0.0);
            assert_eq!(agg.replicas, 1);
        }
        assert_eq!(e.snapshots[0].1, single.snapshots[0].1);
    }
}
