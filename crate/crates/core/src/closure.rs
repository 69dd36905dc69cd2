//! Exact payoff moments of the M-agent Fokker-Planck expansion and an
//! enumeration check of the one-particle closure.
//!
//! For a propensity vector `x` with entry indicators `delta_i ~ Bernoulli(p(x_i))`
//! and `m = sum delta_i`:
//!
//! ```text
//! A_i  = E[(Mc - m) delta_i]
//! D_ik = E[(Mc - m)^2 delta_i delta_k]
//! ```
//!
//! Both are computed by summing over all `2^M` entry profiles. Averaging
//! `A_j` and `D_jj` over the other agents drawn i.i.d. from a discrete
//! distribution `f` must reproduce the closed forms `(M-1) a` and
//! `(M-1)^2 a^2 + (M-1) b` with `a = kappa - alpha`, `b = alpha (1 - alpha)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;
use crate::prob::ProbabilityFn;

pub const MAX_MOMENT_AGENTS: usize = 20;
pub const MAX_AVERAGED_AGENTS: usize = 12;
pub const MAX_ATOMS: usize = 6;
const WEIGHT_TOL: f64 = 1e-12;

/// Finitely supported propensity distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    /// Atoms `(x, w)` with distinct `x`, positive `w` summing to 1 within 1e-12.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("atoms", "need at least one atom"));
        }
        if atoms.iter().any(|&(x, w)| !x.is_finite() || !(w > 0.0)) {
            return Err(invalid("atoms", "weights must be positive and locations finite"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(invalid("atoms", format!("weights sum to {total}, not 1")));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.0 == a.0) {
                return Err(invalid("atoms", format!("duplicate atom at x = {}", a.0)));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalize arbitrary positive weights first.
    pub fn normalized(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        Self::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMoments {
    pub drift: Vec<f64>,
    pub diffusion: DMatrix<f64>,
}

impl PayoffMoments {
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.diffusion.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_symmetric(&self) -> bool {
        let d = &self.diffusion;
        (0..d.nrows()).all(|i| (0..i).all(|k| d[(i, k)] == d[(k, i)]))
    }
}

fn entry_probabilities(xbar: &[f64], pf: &ProbabilityFn) -> Result<Vec<f64>> {
    xbar.iter().map(|&x| pf.value(x)).collect()
}

/// Exact `A` and `D` for entry probabilities `probs` and capacity `mc`.
pub fn payoff_moments_from_probabilities(probs: &[f64], mc: f64) -> Result<PayoffMoments> {
    let m = probs.len();
    if m > MAX_MOMENT_AGENTS {
        return Err(Error::TooLarge {
            what: "M",
            value: m,
            limit: MAX_MOMENT_AGENTS,
        });
    }
    let mut drift = vec![0.0; m];
    let mut diffusion = DMatrix::zeros(m, m);
    let mut members = Vec::with_capacity(m);
    for profile in 0u32..(1u32 << m) {
        let mut weight = 1.0;
        members.clear();
        for (i, &p) in probs.iter().enumerate() {
            if profile >> i & 1 == 1 {
                weight *= p;
                members.push(i);
            } else {
                weight *= 1.0 - p;
            }
        }
        if weight == 0.0 {
            continue;
        }
        let excess = mc - members.len() as f64;
        let w1 = weight * excess;
        let w2 = w1 * excess;
        for (a, &i) in members.iter().enumerate() {
            drift[i] += w1;
            diffusion[(i, i)] += w2;
            for &k in &members[..a] {
                diffusion[(i, k)] += w2;
            }
        }
    }
    for i in 0..m {
        for k in 0..i {
            diffusion[(k, i)] = diffusion[(i, k)];
        }
    }
    Ok(PayoffMoments { drift, diffusion })
}

pub fn exact_payoff_moments(
    xbar: &[f64],
    params: &ModelParams,
    pf: &ProbabilityFn,
) -> Result<PayoffMoments> {
    if xbar.len() != params.agents() {
        return Err(invalid(
            "xbar",
            format!("expected {} propensities, got {}", params.agents(), xbar.len()),
        ));
    }
    if xbar.len() > MAX_MOMENT_AGENTS {
        return Err(Error::TooLarge {
            what: "M",
            value: xbar.len(),
            limit: MAX_MOMENT_AGENTS,
        });
    }
    payoff_moments_from_probabilities(&entry_probabilities(xbar, pf)?, params.capacity())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    /// `(M-1) a`
    pub drift_factor: f64,
    /// `(M-1)^2 a^2 + (M-1) b`
    pub diffusion_factor: f64,
}

impl ClosureCoefficients {
    pub fn from_moments(alpha: f64, beta: f64, params: &ModelParams) -> Self {
        let m1 = params.agents() as f64 - 1.0;
        let a = params.kappa() - alpha;
        let b = alpha * (1.0 - alpha);
        Self {
            alpha,
            beta,
            a,
            b,
            drift_factor: m1 * a,
            diffusion_factor: m1 * m1 * a * a + m1 * b,
        }
    }
}

pub fn closure_coefficients(
    f: &DiscreteDistribution,
    params: &ModelParams,
    pf: &ProbabilityFn,
) -> Result<ClosureCoefficients> {
    let (mut alpha, mut beta) = (0.0, 0.0);
    for &(x, w) in f.atoms() {
        let p = pf.value(x)?;
        alpha += w * p;
        beta += w * p * pf.one_minus(x)?;
    }
    Ok(ClosureCoefficients::from_moments(alpha, beta, params))
}

/// The diffusion factor written before the closure was simplified:
/// `(Mc-1)^2 + (3 - 2 Mc)(M-1) alpha + (M-1)(M-2) alpha^2`. The `3` counts the
/// index coincidences `i = j`, `k = j`, `i = k` in `sum_{i,k} delta_i delta_k delta_j`.
pub fn expanded_diffusion_factor(alpha: f64, params: &ModelParams) -> f64 {
    let m = params.agents() as f64;
    let mc = params.capacity();
    (mc - 1.0) * (mc - 1.0) + (3.0 - 2.0 * mc) * (m - 1.0) * alpha + (m - 1.0) * (m - 2.0) * alpha * alpha
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedCoefficients {
    /// `(1/M) sum_j E[A_j | x_j = x]`, per unit `f(x) p(x)`.
    pub drift: f64,
    /// `(1/M) sum_j E[D_jj | x_j = x]`, per unit `f(x) p(x)`.
    pub diffusion: f64,
}

/// `E[(Mc - m) delta_j]` and `E[(Mc - m)^2 delta_j]` by enumeration of all
/// `2^M` entry profiles.
fn single_agent_moments(probs: &[f64], j: usize, mc: f64) -> (f64, f64) {
    let m = probs.len();
    let (mut first, mut second) = (0.0, 0.0);
    for profile in 0u32..(1u32 << m) {
        if profile >> j & 1 == 0 {
            continue;
        }
        let mut weight = 1.0;
        for (i, &p) in probs.iter().enumerate() {
            weight *= if profile >> i & 1 == 1 { p } else { 1.0 - p };
        }
        let excess = mc - profile.count_ones() as f64;
        first += weight * excess;
        second += weight * excess * excess;
    }
    (first, second)
}

/// Visit every composition of `total` into `parts` nonnegative counts.
fn for_each_composition(total: usize, parts: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(left: usize, slot: usize, counts: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if slot + 1 == counts.len() {
            counts[slot] = left;
            visit(counts);
            return;
        }
        for c in 0..=left {
            counts[slot] = c;
            rec(left - c, slot + 1, counts, visit);
        }
    }
    let mut counts = vec![0; parts];
    rec(total, 0, &mut counts, visit);
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Average the exact payoff moments of the agent sitting at `x_query` over
/// the other `M-1` agents drawn i.i.d. from `f`.
///
/// The other agents are enumerated by configuration class (how many sit on
/// each atom) with multinomial weights; each class is then expanded over all
/// `2^M` entry profiles. The product measure is exchangeable, so every choice
/// of the distinguished index `j` gives the same value and `j = 0` is used.
pub fn averaged_coefficients_exact(
    f: &DiscreteDistribution,
    x_query: f64,
    params: &ModelParams,
    pf: &ProbabilityFn,
) -> Result<AveragedCoefficients> {
    let m = params.agents();
    if m > MAX_AVERAGED_AGENTS {
        return Err(Error::TooLarge {
            what: "M",
            value: m,
            limit: MAX_AVERAGED_AGENTS,
        });
    }
    let atoms = f.atoms();
    if atoms.len() > MAX_ATOMS {
        return Err(Error::TooLarge {
            what: "atoms",
            value: atoms.len(),
            limit: MAX_ATOMS,
        });
    }
    let atom_p = atoms
        .iter()
        .map(|&(x, _)| pf.value(x))
        .collect::<Result<Vec<_>>>()?;
    let p_query = pf.value(x_query)?;
    let ln_others = ln_factorial(m - 1);
    let mc = params.capacity();

    let (mut drift, mut diffusion) = (0.0, 0.0);
    let mut probs = Vec::with_capacity(m);
    for_each_composition(m - 1, atoms.len(), &mut |counts| {
        let mut ln_weight = ln_others;
        for (&c, &(_, w)) in counts.iter().zip(atoms) {
            ln_weight += c as f64 * w.ln() - ln_factorial(c);
        }
        let weight = ln_weight.exp();
        probs.clear();
        probs.push(p_query);
        for (&c, &p) in counts.iter().zip(&atom_p) {
            probs.extend(std::iter::repeat_n(p, c));
        }
        let (first, second) = single_agent_moments(&probs, 0, mc);
        drift += weight * first;
        diffusion += weight * second;
    });
    Ok(AveragedCoefficients {
        drift: drift / p_query,
        diffusion: diffusion / p_query,
    })
}
