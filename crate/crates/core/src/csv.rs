//! CSV writers for the series and snapshots. Floats use Rust's shortest
//! round-trip `{:e}` form, so equal values always print identically.

use std::io::{self, Write};

use crate::abm::{EmpiricalDensity, EnsembleSeries};
use crate::diagnostics::MomentSeries;
use crate::grid::Grid;
use crate::pde::Snapshot;

fn window_label(r: f64) -> String {
    format!("{r}")
}

pub fn moments_header(windows: &[f64]) -> String {
    let mut cols: Vec<String> = ["t", "mass", "alpha", "beta", "a", "b", "c", "d", "energy", "grad_energy", "phi"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(windows.iter().map(|&r| format!("sorting_R{}", window_label(r))));
    cols.push("bmass_left".into());
    cols.push("bmass_right".into());
    cols.join(",")
}

pub fn write_moments<W: Write>(series: &MomentSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "{}", moments_header(&series.windows))?;
    for r in &series.records {
        write!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.mass, r.alpha, r.beta, r.a, r.b, r.c, r.d, r.energy, r.grad_energy, r.phi
        )?;
        for s in &r.sorting {
            write!(w, ",{s:e}")?;
        }
        writeln!(w, ",{:e},{:e}", r.bmass_left, r.bmass_right)?;
    }
    Ok(())
}

pub const SNAPSHOT_HEADER: &str = "x_center,f,p,pf_flux_left_face";

/// `p` is the cell-center probability used by the solver.
pub fn write_snapshot<W: Write>(snapshot: &Snapshot, grid: &Grid, p: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "{SNAPSHOT_HEADER}")?;
    for i in 0..grid.n_cells() {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e}",
            grid.center(i),
            snapshot.f[i],
            p[i],
            snapshot.flux_left_face[i]
        )?;
    }
    Ok(())
}

pub fn abm_header(windows: &[f64]) -> String {
    let mut cols: Vec<String> = ["n", "t", "m_mean", "m_se", "alpha_hat", "a_hat"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(windows.iter().map(|&r| format!("sort_frac_R{}", window_label(r))));
    cols.push("replica_count".into());
    cols.push("alpha_hat_se".into());
    cols.join(",")
}

/// Aggregate ABM series; `m_mean`/`m_se` are `NaN` at `n = 0`.
pub fn write_abm<W: Write>(series: &EnsembleSeries, windows: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "{}", abm_header(windows))?;
    for r in &series.records {
        write!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.n, r.t, r.m_mean, r.m_se, r.alpha_hat_mean, r.a_hat_mean
        )?;
        for s in &r.sorting_mean {
            write!(w, ",{s:e}")?;
        }
        writeln!(w, ",{},{:e}", r.replicas, r.alpha_hat_se)?;
    }
    Ok(())
}

pub const HISTOGRAM_HEADER: &str = "x_center,f_hat";

pub fn write_histogram<W: Write>(density: &EmpiricalDensity, grid: &Grid, mut w: W) -> io::Result<()> {
    writeln!(w, "{HISTOGRAM_HEADER}")?;
    for (i, f) in density.f.iter().enumerate() {
        writeln!(w, "{:e},{f:e}", grid.center(i))?;
    }
    Ok(())
}
