//! The propensity-to-probability map `p(x)`.
//!
//! Every family carries a certified constant `c_p` for which
//!
//! ```text
//! 0 <= p'(x) <= c_p (1 - p(x)),   |p''(x)| <= c_p (1 - p(x)),   |p''(x)| <= c_p p'(x)
//! ```
//!
//! hold on all of the real line (tabulated maps: on the table). The
//! certificate is fixed at construction so that every downstream bound uses
//! the same constant.

use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Derivative order for [`ProbabilityFn::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Order {
    type Error = Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            0 => Ok(Order::Value),
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(invalid("order", format!("derivative order {order} not in {{0,1,2}}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `p_min + (1 - p_min) * sigmoid(scale * (x - center))`.
    LogisticFloor { p_min: f64, scale: f64, center: f64 },
    /// `p_min + (1 - p_min) * sigmoid(alpha * asinh(x))`.
    ///
    /// For large positive `x` this behaves like `y^a / (1 + y^a)` and for large
    /// negative `x` like `1 / (1 + |y|^a)` with `y = 2x`, i.e. algebraic tails.
    RationalTails { alpha: f64, p_min: f64 },
    /// Quintic Hermite interpolation of sampled `(x, p, p')` with `p''`
    /// taken from centered differences of `p'`.
    Tabulated(Table),
    /// Constant map; used by solver verification runs.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    x: Vec<f64>,
    p: Vec<f64>,
    dp: Vec<f64>,
    d2p: Vec<f64>,
}

impl Table {
    /// Build from samples. `x` must be strictly increasing with at least three
    /// points.
    pub fn new(x: Vec<f64>, p: Vec<f64>, dp: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || p.len() != n || dp.len() != n {
            return Err(invalid(
                "probability.table",
                "need at least 3 rows of (x, p, p')",
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("probability.table", "x column must be strictly increasing"));
        }
        if x.iter().chain(&p).chain(&dp).any(|v| !v.is_finite()) {
            return Err(invalid("probability.table", "non-finite entry"));
        }
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(invalid("probability.table", "p values must lie in [0, 1]"));
        }
        let mut d2p = vec![0.0; n];
        d2p[0] = (dp[1] - dp[0]) / (x[1] - x[0]);
        d2p[n - 1] = (dp[n - 1] - dp[n - 2]) / (x[n - 1] - x[n - 2]);
        for i in 1..n - 1 {
            d2p[i] = (dp[i + 1] - dp[i - 1]) / (x[i + 1] - x[i - 1]);
        }
        Ok(Self { x, p, dp, d2p })
    }

    /// Parse a whitespace- or comma-separated three-column text table.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut x, mut p, mut dp) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 3 {
                return Err(invalid(
                    "probability.table",
                    format!("line {}: expected 3 columns, found {}", lineno + 1, cols.len()),
                ));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| {
                    invalid("probability.table", format!("line {}: {e}", lineno + 1))
                })
            };
            x.push(parse(cols[0])?);
            p.push(parse(cols[1])?);
            dp.push(parse(cols[2])?);
        }
        Self::new(x, p, dp)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            invalid("probability.table", format!("{}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn eval(&self, x: f64, order: Order) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::Extrapolation { x, lo, hi });
        }
        // index of the interval [x_k, x_{k+1}] containing x
        let k = match self.x.partition_point(|&v| v <= x) {
            0 => 0,
            i => (i - 1).min(self.x.len() - 2),
        };
        let span = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / span;
        let weights = [
            self.p[k],
            span * self.dp[k],
            span * span * self.d2p[k],
            span * span * self.d2p[k + 1],
            span * self.dp[k + 1],
            self.p[k + 1],
        ];
        let deriv = match order {
            Order::Value => 0,
            Order::First => 1,
            Order::Second => 2,
        };
        let mut acc = 0.0;
        for (w, basis) in weights.iter().zip(QUINTIC_HERMITE.iter()) {
            acc += w * poly_derivative(basis, t, deriv);
        }
        Ok(acc / span.powi(deriv as i32))
    }
}

// Coefficients (ascending powers of t) of the quintic Hermite basis on [0, 1]:
// value, slope and curvature at the left end, then curvature, slope and value
// at the right end.
const QUINTIC_HERMITE: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
];

fn poly_derivative(coeffs: &[f64; 6], t: f64, deriv: usize) -> f64 {
    let mut acc = 0.0;
    for power in (deriv..6).rev() {
        let mut factor = 1.0;
        for j in 0..deriv {
            factor *= (power - j) as f64;
        }
        acc = acc * t + factor * coeffs[power];
    }
    acc
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A probability map together with its floor and its certified constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityFn {
    family: Family,
    epsilon: f64,
    p_min: f64,
    c_p: f64,
}

impl ProbabilityFn {
    pub fn logistic_floor(p_min: f64, scale: f64, center: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_min) {
            return Err(invalid("probability.p_min", format!("need 0 <= p_min < 1, got {p_min}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid("probability.scale", format!("need scale > 0, got {scale}")));
        }
        if !center.is_finite() {
            return Err(invalid("probability.center", "must be finite"));
        }
        Ok(Self {
            family: Family::LogisticFloor { p_min, scale, center },
            epsilon: 0.0,
            p_min,
            c_p: scale.max(scale * scale),
        })
    }

    pub fn rational_tails(alpha: f64, p_min: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("probability.alpha", format!("need alpha > 0, got {alpha}")));
        }
        if !(0.0..1.0).contains(&p_min) {
            return Err(invalid("probability.p_min", format!("need 0 <= p_min < 1, got {p_min}")));
        }
        // p'/(1-p) = s*u' <= alpha, |p''|/(1-p) <= alpha^2 + alpha,
        // |p''|/p' <= alpha + sup |x|/(1+x^2) = alpha + 1/2
        Ok(Self {
            family: Family::RationalTails { alpha, p_min },
            epsilon: 0.0,
            p_min,
            c_p: (alpha * alpha + alpha).max(alpha + 0.5),
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(invalid("probability.value", format!("need 0 < p <= 1, got {value}")));
        }
        Ok(Self {
            family: Family::Constant(value),
            epsilon: 0.0,
            p_min: 0.0,
            c_p: 0.0,
        })
    }

    /// Tabulated map; the certificate is the smallest constant passing on the
    /// table nodes and three interior points per interval.
    pub fn tabulated(table: Table) -> Result<Self> {
        let p_min = table.p.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut grid = Vec::with_capacity(4 * table.x.len());
        for w in table.x.windows(2) {
            for j in 0..4 {
                grid.push(w[0] + (w[1] - w[0]) * j as f64 / 4.0);
            }
        }
        grid.push(table.range().1);
        let mut pf = Self {
            family: Family::Tabulated(table),
            epsilon: 0.0,
            p_min,
            c_p: 0.0,
        };
        let report = verify_p_conditions(&pf, &grid, 0.0)?;
        pf.c_p = report.minimal_c_p;
        Ok(pf)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Infimum of `p` over the real line.
    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn c_p(&self) -> f64 {
        self.c_p
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `p_eps = (p + eps) / (1 + eps)`; `eps = 0` returns an identical map.
    /// The certificate is unchanged: both sides of every condition scale by
    /// `1 / (1 + eps)`.
    pub fn regularize(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(invalid("solver.epsilon", format!("need epsilon >= 0, got {epsilon}")));
        }
        if epsilon == 0.0 {
            return Ok(self.clone());
        }
        // compose with any existing regularization
        let total = self.epsilon + epsilon + self.epsilon * epsilon;
        Ok(Self {
            family: self.family.clone(),
            epsilon: total,
            p_min: (self.p_min + epsilon) / (1.0 + epsilon),
            c_p: self.c_p,
        })
    }

    pub fn eval(&self, x: f64, order: Order) -> Result<f64> {
        let raw = self.raw(x, order)?;
        if self.epsilon == 0.0 {
            return Ok(raw);
        }
        Ok(match order {
            Order::Value => (raw + self.epsilon) / (1.0 + self.epsilon),
            _ => raw / (1.0 + self.epsilon),
        })
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.eval(x, Order::Value)
    }

    /// `1 - p(x)` evaluated without cancellation where the family allows.
    pub fn one_minus(&self, x: f64) -> Result<f64> {
        let raw = match &self.family {
            Family::LogisticFloor { p_min, scale, center } => {
                (1.0 - p_min) * sigmoid(-scale * (x - center))
            }
            Family::RationalTails { alpha, p_min } => (1.0 - p_min) * sigmoid(-alpha * x.asinh()),
            Family::Tabulated(t) => 1.0 - t.eval(x, Order::Value)?,
            Family::Constant(v) => 1.0 - v,
        };
        Ok(raw / (1.0 + self.epsilon))
    }

    fn raw(&self, x: f64, order: Order) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Contract(format!("probability queried at non-finite x = {x}")));
        }
        Ok(match &self.family {
            Family::LogisticFloor { p_min, scale, center } => {
                let z = scale * (x - center);
                let s = sigmoid(z);
                let q = sigmoid(-z);
                let amp = 1.0 - p_min;
                match order {
                    Order::Value => p_min + amp * s,
                    Order::First => amp * scale * s * q,
                    Order::Second => amp * scale * scale * s * q * (q - s),
                }
            }
            Family::RationalTails { alpha, p_min } => {
                let u = alpha * x.asinh();
                let s = sigmoid(u);
                let q = sigmoid(-u);
                let root = (1.0 + x * x).sqrt();
                let du = alpha / root;
                let d2u = -alpha * x / (root * root * root);
                let amp = 1.0 - p_min;
                match order {
                    Order::Value => p_min + amp * s,
                    Order::First => amp * s * q * du,
                    Order::Second => amp * s * q * ((q - s) * du * du + d2u),
                }
            }
            Family::Tabulated(t) => t.eval(x, order)?,
            Family::Constant(v) => match order {
                Order::Value => *v,
                _ => 0.0,
            },
        })
    }
}

/// Evaluate `p`, `p'` or `p''` at `x`; `order` must be 0, 1 or 2.
pub fn prob_eval(pf: &ProbabilityFn, x: f64, order: u8) -> Result<f64> {
    pf.eval(x, Order::try_from(order)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    /// `p` decreasing between neighbours or `p' < 0`.
    Monotonicity,
    /// `p' > c_p (1 - p)`.
    SlopeBound,
    /// `|p''| > c_p (1 - p)`.
    CurvatureBound,
    /// `|p''| > c_p p'`.
    CurvatureSlope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub x: f64,
    pub kind: ConditionKind,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub c_p_tested: f64,
    pub violations: Vec<Violation>,
    /// Smallest constant passing every bound on the grid (infinite if some
    /// bound cannot hold for any constant, e.g. `p'' != 0` where `p' = 0`).
    pub minimal_c_p: f64,
    /// Grid points where `p' = 0`. Allowed, but listed.
    pub flat_points: Vec<f64>,
}

impl ConditionReport {
    pub fn certified(&self) -> bool {
        self.violations.is_empty()
    }
}

const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-14;

fn exceeds(lhs: f64, bound: f64) -> bool {
    lhs > bound * (1.0 + REL_SLACK) + ABS_SLACK
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= ABS_SLACK {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// Check every derivative condition at each grid point for `c_p_candidate`.
pub fn verify_p_conditions(
    pf: &ProbabilityFn,
    test_grid: &[f64],
    c_p_candidate: f64,
) -> Result<ConditionReport> {
    if test_grid.is_empty() {
        return Err(invalid("test_grid", "must be nonempty"));
    }
    if test_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("test_grid", "must be sorted"));
    }
    let mut violations = Vec::new();
    let mut flat_points = Vec::new();
    let mut minimal: f64 = 0.0;
    let mut previous: Option<f64> = None;
    for &x in test_grid {
        let p = pf.eval(x, Order::Value)?;
        let dp = pf.eval(x, Order::First)?;
        let d2p = pf.eval(x, Order::Second)?;
        let q = pf.one_minus(x)?;

        let decreasing = previous.is_some_and(|prev| p < prev - ABS_SLACK);
        if dp < -ABS_SLACK || decreasing {
            violations.push(Violation {
                x,
                kind: ConditionKind::Monotonicity,
                lhs: dp,
                rhs: 0.0,
            });
            minimal = f64::INFINITY;
        }
        previous = Some(p);
        if dp.abs() <= ABS_SLACK {
            flat_points.push(x);
        }

        let checks = [
            (ConditionKind::SlopeBound, dp.max(0.0), q),
            (ConditionKind::CurvatureBound, d2p.abs(), q),
            (ConditionKind::CurvatureSlope, d2p.abs(), dp.max(0.0)),
        ];
        for (kind, lhs, rhs) in checks {
            minimal = minimal.max(ratio(lhs, rhs));
            if exceeds(lhs, c_p_candidate * rhs) {
                violations.push(Violation { x, kind, lhs, rhs });
            }
        }
    }
    Ok(ConditionReport {
        c_p_tested: c_p_candidate,
        violations,
        minimal_c_p: minimal,
        flat_points,
    })
}

/// Uniform grid helper: `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
