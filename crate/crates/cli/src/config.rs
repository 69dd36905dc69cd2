//! Experiment configuration: one TOML file with the sections `model`,
//! `probability`, `abm`, `pde`, `diagnostics`, `output`, `compare` and
//! `sweep`. Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use entry_kinetics::diagnostics::VerdictConfig;
use entry_kinetics::pde::{InitialDensity, SolverConfig};
use entry_kinetics::prob::Table;
use entry_kinetics::{Error as CoreError, Grid, ModelParams, ProbabilityFn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub probability: ProbabilitySection,
    pub abm: AbmSection,
    pub pde: PdeSection,
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
    pub compare: CompareSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "Mc")]
    pub mc: f64,
    pub h: f64,
    pub tau: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            m: 11,
            mc: 3.0,
            h: 0.1,
            tau: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbabilitySection {
    LogisticFloor {
        #[serde(default = "default_p_min")]
        p_min: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: f64,
    },
    RationalTails {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "default_p_min")]
        p_min: f64,
    },
    Constant {
        value: f64,
    },
    /// Three-column text table `x p p'`; relative paths are resolved
    /// against the directory of the config file.
    Tabulated {
        table: PathBuf,
    },
}

fn default_p_min() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

impl Default for ProbabilitySection {
    fn default() -> Self {
        ProbabilitySection::LogisticFloor {
            p_min: 0.1,
            scale: 1.0,
            center: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbmSection {
    pub replicas: usize,
    pub rounds: u64,
    pub base_seed: u64,
    pub x0: InitialDensity,
    /// Rounds at which pooled propensities are histogrammed. Empty means
    /// half way and the last round.
    pub snapshot_rounds: Vec<u64>,
}

impl Default for AbmSection {
    fn default() -> Self {
        Self {
            replicas: 100,
            rounds: 1000,
            base_seed: 1,
            x0: InitialDensity::default(),
            snapshot_rounds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            x_min: -12.0,
            x_max: 12.0,
            n_cells: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub grid: GridSection,
    pub solver: SolverConfig,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub record_interval: f64,
    /// Extra records at `log_record_start * log_record_ratio^k` up to `T`,
    /// for resolving fast transients. 0 disables them.
    pub log_record_start: f64,
    pub log_record_ratio: f64,
    /// Empty means `0, T/2, T`.
    pub snapshot_times: Vec<f64>,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            solver: SolverConfig::default(),
            t_end: 500.0,
            record_interval: 0.5,
            log_record_start: 0.0,
            log_record_ratio: 1.1,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    /// Sorting window half-widths, shared by the ABM and the PDE.
    pub windows: Vec<f64>,
    pub bounds_tol: f64,
    pub clipped_tol: f64,
    pub phi_frac: f64,
    pub sorting_tol: f64,
    pub bound_factor: f64,
    pub trailing_fraction: f64,
    pub c_t: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let v = VerdictConfig::default();
        Self {
            windows: vec![1.0, 2.0],
            bounds_tol: 1e-6,
            clipped_tol: 1e-6,
            phi_frac: v.phi_frac,
            sorting_tol: v.sorting_tol,
            bound_factor: v.bound_factor,
            trailing_fraction: v.trailing_fraction,
            c_t: v.c_t,
        }
    }
}

impl DiagnosticsSection {
    pub fn verdict(&self) -> VerdictConfig {
        VerdictConfig {
            phi_frac: self.phi_frac,
            sorting_tol: self.sorting_tol,
            bound_factor: self.bound_factor,
            trailing_fraction: self.trailing_fraction,
            c_t: self.c_t,
        }
    }
}

/// ABM record cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cadence {
    Every { stride: u64 },
    /// Every round up to `dense`, then geometrically spaced.
    Geometric { dense: u64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub cadence: Cadence,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            cadence: Cadence::Geometric { dense: 20, ratio: 1.15 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Allowed alpha gap is `se_factor * SE + allowance`.
    pub se_factor: f64,
    pub allowance: f64,
    pub l1_tol: f64,
    /// Grid cells merged per histogram bin for the L1 distance.
    pub l1_coarsen: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            se_factor: 3.0,
            allowance: 0.01,
            l1_tol: 0.1,
            l1_coarsen: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    #[serde(rename = "Mc")]
    pub mc: Vec<f64>,
    pub h: Vec<f64>,
    pub tau: Vec<f64>,
    /// Derive tau from h so that h^2 / tau keeps its base value.
    pub fixed_h2_over_tau: bool,
    /// Threshold for the measured sorting time.
    pub sorting_threshold: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            m: Vec::new(),
            mc: Vec::new(),
            h: Vec::new(),
            tau: Vec::new(),
            fixed_h2_over_tau: false,
            sorting_threshold: 0.1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// `prefix.field: reason`, unless the core error already names a full path.
fn field_message(prefix: &str, e: &CoreError) -> String {
    match e {
        CoreError::InvalidParameter { field, reason } if field.contains('.') || prefix.is_empty() => {
            format!("{field}: {reason}")
        }
        CoreError::InvalidParameter { field, reason } => format!("{prefix}.{field}: {reason}"),
        other => format!("{prefix}: {other}"),
    }
}

fn positive(errors: &mut Vec<String>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{path}: must be positive and finite, got {v}"));
    }
}

/// One cross-product point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub m: usize,
    pub mc: f64,
    pub h: f64,
    pub tau: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse and validate; relative table paths are made absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let ProbabilitySection::Tabulated { table } = &mut cfg.probability {
            if table.is_relative() {
                *table = base.join(&*table);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn params(&self) -> Result<ModelParams, CoreError> {
        let m = &self.model;
        ModelParams::new(m.m, m.mc, m.h, m.tau)
    }

    pub fn probability(&self) -> Result<ProbabilityFn, CoreError> {
        match &self.probability {
            ProbabilitySection::LogisticFloor { p_min, scale, center } => {
                ProbabilityFn::logistic_floor(*p_min, *scale, *center)
            }
            ProbabilitySection::RationalTails { alpha, p_min } => ProbabilityFn::rational_tails(*alpha, *p_min),
            ProbabilitySection::Constant { value } => ProbabilityFn::constant(*value),
            ProbabilitySection::Tabulated { table } => {
                ProbabilityFn::tabulated(Table::read(table)?)
            }
        }
    }

    pub fn grid(&self) -> Result<Grid, CoreError> {
        let g = &self.pde.grid;
        Grid::new(g.x_min, g.x_max, g.n_cells)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        if self.pde.snapshot_times.is_empty() {
            vec![0.0, 0.5 * self.pde.t_end, self.pde.t_end]
        } else {
            self.pde.snapshot_times.clone()
        }
    }

    pub fn snapshot_rounds(&self) -> Vec<u64> {
        if self.abm.snapshot_rounds.is_empty() {
            vec![self.abm.rounds / 2, self.abm.rounds]
        } else {
            self.abm.snapshot_rounds.clone()
        }
    }

    /// Uniform records plus the optional log-spaced early ones.
    pub fn record_times(&self, t_end: f64) -> Vec<f64> {
        let p = &self.pde;
        let mut times = Vec::new();
        if p.log_record_start > 0.0 {
            let mut t = p.log_record_start;
            while t < t_end {
                times.push(t);
                t *= p.log_record_ratio;
            }
        }
        let count = (t_end / p.record_interval).floor() as usize;
        times.extend((0..=count).map(|k| k as f64 * p.record_interval));
        times.push(t_end);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Cross product of the declared sweep lists; missing lists take the
    /// base model value.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let base = self.model;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let ms = if s.m.is_empty() { vec![base.m] } else { s.m.clone() };
        let mut points = Vec::new();
        for &m in &ms {
            for mc in or(&s.mc, base.mc) {
                for h in or(&s.h, base.h) {
                    let taus = if s.fixed_h2_over_tau {
                        vec![h * h * base.tau / (base.h * base.h)]
                    } else {
                        or(&s.tau, base.tau)
                    };
                    for tau in taus {
                        points.push(SweepPoint { m, mc, h, tau });
                    }
                }
            }
        }
        points
    }

    /// Collect every violated constraint, with field paths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors: Vec<String> = Vec::new();
        let m = &self.model;
        errors.extend(ModelParams::validate(m.m, m.mc, m.h, m.tau).iter().map(|e| field_message("model", e)));
        if let Err(e) = self.probability() {
            errors.push(field_message("probability", &e));
        }
        if let Err(e) = self.grid() {
            errors.push(field_message("pde", &e));
        }
        errors.extend(self.pde.solver.validate().iter().map(|e| field_message("", e)));
        errors.extend(self.abm.x0.validate().iter().map(|e| field_message("", e)));

        if self.abm.replicas == 0 {
            errors.push("abm.replicas: need at least one replica".into());
        }
        if self.abm.rounds == 0 {
            errors.push("abm.rounds: need at least one round".into());
        }
        if let Some(&n) = self.abm.snapshot_rounds.iter().find(|&&n| n > self.abm.rounds) {
            errors.push(format!("abm.snapshot_rounds: round {n} is beyond abm.rounds = {}", self.abm.rounds));
        }

        let p = &self.pde;
        if !(p.t_end >= 0.0 && p.t_end.is_finite()) {
            errors.push(format!("pde.T: must be finite and nonnegative, got {}", p.t_end));
        }
        positive(&mut errors, "pde.record_interval", p.record_interval);
        if !(p.log_record_start >= 0.0 && p.log_record_start.is_finite()) {
            errors.push(format!("pde.log_record_start: must be nonnegative, got {}", p.log_record_start));
        }
        if !(p.log_record_ratio > 1.0 && p.log_record_ratio.is_finite()) {
            errors.push(format!("pde.log_record_ratio: need ratio > 1, got {}", p.log_record_ratio));
        }
        if let Some(t) = p.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= p.t_end)) {
            errors.push(format!("pde.snapshot_times: {t} outside [0, T = {}]", p.t_end));
        }

        let d = &self.diagnostics;
        if d.windows.is_empty() {
            errors.push("diagnostics.windows: need at least one window".into());
        }
        for &r in &d.windows {
            positive(&mut errors, "diagnostics.windows", r);
        }
        positive(&mut errors, "diagnostics.bounds_tol", d.bounds_tol);
        positive(&mut errors, "diagnostics.clipped_tol", d.clipped_tol);
        positive(&mut errors, "diagnostics.phi_frac", d.phi_frac);
        positive(&mut errors, "diagnostics.sorting_tol", d.sorting_tol);
        positive(&mut errors, "diagnostics.bound_factor", d.bound_factor);
        positive(&mut errors, "diagnostics.c_t", d.c_t);
        if !(d.trailing_fraction > 0.0 && d.trailing_fraction <= 1.0) {
            errors.push(format!("diagnostics.trailing_fraction: need 0 < fraction <= 1, got {}", d.trailing_fraction));
        }

        match self.output.cadence {
            Cadence::Every { stride: 0 } => {
                errors.push("output.cadence.stride: must be at least 1".into());
            }
            Cadence::Geometric { ratio, .. } if !(ratio > 1.0 && ratio.is_finite()) => {
                errors.push(format!("output.cadence.ratio: need ratio > 1, got {ratio}"));
            }
            _ => {}
        }
        if self.output.directory.as_os_str().is_empty() {
            errors.push("output.directory: must not be empty".into());
        }

        let c = &self.compare;
        positive(&mut errors, "compare.se_factor", c.se_factor);
        if !(c.allowance >= 0.0 && c.allowance.is_finite()) {
            errors.push(format!("compare.allowance: must be nonnegative, got {}", c.allowance));
        }
        positive(&mut errors, "compare.l1_tol", c.l1_tol);
        if c.l1_coarsen == 0 {
            errors.push("compare.l1_coarsen: must be at least 1".into());
        }

        let s = &self.sweep;
        if s.fixed_h2_over_tau && !s.tau.is_empty() {
            errors.push("sweep.tau: cannot be listed together with sweep.fixed_h2_over_tau".into());
        }
        positive(&mut errors, "sweep.sorting_threshold", s.sorting_threshold);
        let declared = !(s.m.is_empty() && s.mc.is_empty() && s.h.is_empty() && s.tau.is_empty());
        for (k, pt) in self.sweep_points().iter().enumerate().filter(|_| declared) {
            for e in ModelParams::validate(pt.m, pt.mc, pt.h, pt.tau) {
                errors.push(field_message(&format!("sweep[{k}]"), &e));
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}
