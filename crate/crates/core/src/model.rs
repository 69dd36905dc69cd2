//! Game parameters, the entry payoff and the symmetric equilibrium summary.
//!
//! Each round every agent decides to enter the market or stay out. An
//! entrant receives `h (Mc - m)` where `m` is the number of entrants; staying
//! out pays nothing. `Mc` is stored as a real so that capacities between two
//! integers can be swept.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameters of the repeated market-entry game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    m: usize,
    mc: f64,
    h: f64,
    tau: f64,
}

impl ModelParams {
    pub fn new(m: usize, mc: f64, h: f64, tau: f64) -> Result<Self> {
        let mut errors = Self::validate(m, mc, h, tau);
        if errors.is_empty() {
            Ok(Self { m, mc, h, tau })
        } else {
            Err(errors.remove(0))
        }
    }

    /// All violated invariants, in field order.
    pub fn validate(m: usize, mc: f64, h: f64, tau: f64) -> Vec<Error> {
        let mut errors = Vec::new();
        if m < 2 {
            errors.push(invalid("M", format!("need M >= 2, got {m}")));
        }
        if !(mc.is_finite() && mc > 1.0 && mc < m as f64) {
            errors.push(invalid("Mc", format!("need 1 < Mc < M = {m}, got {mc}")));
        }
        if !(h.is_finite() && h > 0.0) {
            errors.push(invalid("h", format!("need h > 0, got {h}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            errors.push(invalid("tau", format!("need tau > 0, got {tau}")));
        }
        errors
    }

    pub fn agents(&self) -> usize {
        self.m
    }

    pub fn capacity(&self) -> f64 {
        self.mc
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(Mc - 1) / (M - 1)`: the entry fraction at which the transport
    /// coefficient of the kinetic equation vanishes.
    pub fn kappa(&self) -> f64 {
        (self.mc - 1.0) / (self.m as f64 - 1.0)
    }

    /// The open interval `((Mc-1)/M, Mc/M)` of entry fractions compatible
    /// with the Nash entrant band.
    pub fn learning_band(&self) -> (f64, f64) {
        let m = self.m as f64;
        ((self.mc - 1.0) / m, self.mc / m)
    }

    pub fn with_h_tau(&self, h: f64, tau: f64) -> Result<Self> {
        Self::new(self.m, self.mc, h, tau)
    }
}

pub fn kappa(params: &ModelParams) -> f64 {
    params.kappa()
}

/// Payoff of one agent for one round given the entrant count `m`.
pub fn payoff(entered: bool, m: usize, params: &ModelParams) -> Result<f64> {
    if m > params.agents() {
        return Err(Error::Contract(format!(
            "entrant count {m} exceeds agent count {}",
            params.agents()
        )));
    }
    if !entered {
        return Ok(0.0);
    }
    if m == 0 {
        return Err(Error::Contract(
            "an entrant implies at least one entrant".into(),
        ));
    }
    Ok(params.h() * (params.capacity() - m as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSummary {
    /// Entry probability of the symmetric mixed equilibrium.
    pub mixed_probability: f64,
    /// Expected number of entrants under the mixed equilibrium.
    pub expected_entrants: f64,
    /// Entrant counts `[Mc - 1, Mc]` covered by the pure equilibria.
    pub nash_band: (f64, f64),
    pub inside_band: bool,
}

pub fn equilibrium_summary(params: &ModelParams) -> EquilibriumSummary {
    let p_bar = params.kappa();
    let expected = params.agents() as f64 * p_bar;
    let mc = params.capacity();
    EquilibriumSummary {
        mixed_probability: p_bar,
        expected_entrants: expected,
        nash_band: (mc - 1.0, mc),
        inside_band: expected > mc - 1.0 && expected < mc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_examples() {
        let p = ModelParams::new(11, 3.0, 0.1, 0.01).unwrap();
        assert!((p.kappa() - 0.2).abs() < 1e-15);
        let p = ModelParams::new(5, 3.0, 0.1, 0.01).unwrap();
        assert_eq!(p.kappa(), 0.5);
        let p = ModelParams::new(2, 1.0 + 1e-9, 0.1, 0.01).unwrap();
        assert!(p.kappa() > 0.0 && p.kappa() < 1e-8);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(1, 1.5, 0.1, 0.1).is_err());
        assert!(ModelParams::new(5, 5.0, 0.1, 0.1).is_err());
        assert!(ModelParams::new(5, 1.0, 0.1, 0.1).is_err());
        assert!(ModelParams::new(5, 2.0, 0.0, 0.1).is_err());
        assert!(ModelParams::new(5, 2.0, 0.1, -1.0).is_err());
        assert_eq!(ModelParams::validate(1, 7.0, -1.0, 0.0).len(), 4);
    }

    #[test]
    fn payoff_examples() {
        let p = ModelParams::new(11, 3.0, 0.1, 0.01).unwrap();
        assert!((payoff(true, 5, &p).unwrap() + 0.2).abs() < 1e-15);
        assert_eq!(payoff(true, 3, &p).unwrap(), 0.0);
        assert_eq!(payoff(false, 7, &p).unwrap(), 0.0);
        assert!(payoff(true, 0, &p).is_err());
        assert!(payoff(false, 12, &p).is_err());
    }

    #[test]
    fn equilibrium_examples() {
        let e = equilibrium_summary(&ModelParams::new(11, 3.0, 0.1, 0.01).unwrap());
        assert!((e.mixed_probability - 0.2).abs() < 1e-15);
        assert!((e.expected_entrants - 2.2).abs() < 1e-12);
        assert_eq!(e.nash_band, (2.0, 3.0));
        assert!(e.inside_band);

        let e = equilibrium_summary(&ModelParams::new(3, 2.0, 0.1, 0.01).unwrap());
        assert_eq!(e.mixed_probability, 0.5);
        assert_eq!(e.expected_entrants, 1.5);

        let e = equilibrium_summary(&ModelParams::new(10, 10.0 - 1e-9, 0.1, 0.01).unwrap());
        assert!(e.mixed_probability > 1.0 - 1e-9);
    }

    fn params_strategy() -> impl Strategy<Value = ModelParams> {
        (2usize..200, 0.0001f64..0.9999).prop_map(|(m, frac)| {
            let mc = 1.0 + frac * (m as f64 - 1.0);
            ModelParams::new(m, mc, 0.1, 0.01).unwrap()
        })
    }

    proptest! {
        #[test]
        fn kappa_inside_learning_band(p in params_strategy()) {
            let k = p.kappa();
            let (lo, hi) = p.learning_band();
            prop_assert!(k > 0.0 && k < 1.0);
            prop_assert!(k > lo && k < hi);
        }

        #[test]
        fn expected_entrants_inside_nash_band(p in params_strategy()) {
            let e = equilibrium_summary(&p);
            prop_assert!(e.inside_band);
        }

        #[test]
        fn payoff_antisymmetric_about_capacity(mc in 2usize..40, d in 0usize..20) {
            let m = 2 * mc + 2;
            let p = ModelParams::new(m, mc as f64, 0.3, 0.01).unwrap();
            let d = d.min(mc - 1);
            let above = payoff(true, mc + d, &p).unwrap();
            let below = payoff(true, mc - d, &p).unwrap();
            prop_assert!((above + below).abs() < 1e-12);
        }
    }
}
