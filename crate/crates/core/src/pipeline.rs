//! Reconstruction driven by a [`RunConfig`], and the multi-start uniqueness test.

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::io::RunConfig;
use crate::minimizer::{minimize, Init, Reconstruction};
use crate::oracle::Domain;
use crate::trace::{minimize_with_trace, DiskTrace};

#[derive(Debug, Clone)]
pub struct Run {
    pub rec: Reconstruction,
    /// Boundary data the final solve used.
    pub f_used: ScalarField,
    /// Whether the level-line trace transfer was applied.
    pub traced: bool,
}

/// Whether `f` carries exactly the configured phantom's boundary samples,
/// so the analytic trace may replace it.
pub fn traceable(cfg: &RunConfig, f: &ScalarField) -> bool {
    if cfg.domain != Domain::Disk || cfg.trace_passes == 0 {
        return false;
    }
    let trace = DiskTrace::new((0.0, 0.0), 1.0, |x, y| cfg.phantom.boundary_value(x, y));
    let sampled = trace.sample_nodes(f);
    (0..f.grid.len()).all(|k| !f.mask.is_boundary(k) || sampled.values[k].to_bits() == f.values[k].to_bits())
}

/// Reconstructs from `a` and `f` with the configured solver and the given
/// initialization. On the disk, boundary data that matches the phantom is
/// refined with `trace_passes` rounds of level-line transfer.
pub fn reconstruct(cfg: &RunConfig, a: &ScalarField, f: &ScalarField, init: Init) -> Result<Run> {
    let solver = cfg.solver(&a.grid).with_init(init);
    if traceable(cfg, f) {
        let trace = DiskTrace::new((0.0, 0.0), 1.0, |x, y| cfg.phantom.boundary_value(x, y));
        let (rec, f_used) = minimize_with_trace(a, &trace, &solver, cfg.trace_passes)?;
        Ok(Run { rec, f_used, traced: true })
    } else {
        let rec = minimize(a, f, &solver)?;
        Ok(Run { rec, f_used: f.clone(), traced: false })
    }
}

/// `h^2 sum |u - v|` over nodes with `a > delta`.
pub fn l1_distance(u: &ScalarField, v: &ScalarField, a: &ScalarField, delta: f64) -> f64 {
    let s: f64 = (0..u.grid.len())
        .filter(|&k| u.mask.is_active(k) && a.values[k] > delta)
        .map(|k| (u.values[k] - v.values[k]).abs())
        .sum();
    s * u.grid.cell_area()
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub labels: Vec<String>,
    pub runs: Vec<Run>,
    /// `(i, j, distance)` for every pair `i < j`.
    pub distances: Vec<(usize, usize, f64)>,
    /// Area of `{a > delta}`.
    pub area: f64,
    pub range_f: f64,
    pub tolerance: f64,
}

impl UniquenessReport {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().map(|d| d.2).fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_distance() <= self.tolerance
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("init_a,init_b,l1_distance,tolerance\n");
        for &(i, j, d) in &self.distances {
            s.push_str(&format!("{},{},{:e},{:e}\n", self.labels[i], self.labels[j], d, self.tolerance));
        }
        s
    }
}

/// Runs every configured initialization and measures pairwise L1 distances
/// over `{a > delta0 * max a}` against `uniq_tol * area * range(f)`.
pub fn uniqueness(cfg: &RunConfig, a: &ScalarField, f: &ScalarField) -> Result<UniquenessReport> {
    if !a.same_support(f) {
        return Err(Error::GridMismatch);
    }
    let delta = cfg.delta0 * a.max_active().max(0.0);
    let mut runs = Vec::with_capacity(cfg.inits.len());
    for init in &cfg.inits {
        runs.push(reconstruct(cfg, a, f, init.clone())?);
    }
    let labels = cfg.inits.iter().map(Init::label).collect();
    let mut distances = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            distances.push((i, j, l1_distance(&runs[i].rec.u, &runs[j].rec.u, a, delta)));
        }
    }
    let count = (0..a.grid.len()).filter(|&k| a.mask.is_active(k) && a.values[k] > delta).count();
    let area = count as f64 * a.grid.cell_area();
    let (lo, hi) = f.boundary_range();
    let range_f = hi - lo;
    Ok(UniquenessReport { labels, runs, distances, area, range_f, tolerance: cfg.uniq_tol * area * range_f })
}
