//! Weighted least-gradient reconstruction.
//!
//! Minimizes `h^2 sum a |grad u|` over fields with `u = f` on the boundary
//! nodes using a first-order primal-dual iteration. The dual iterate `b` is
//! kept in the pointwise ball `|b| <= a` by exact projection, so every
//! iterate yields a valid lower bound on the optimal value.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::harmonic_extension;
use crate::grid::{check_weight, clamp, div, dot_edges, grad, range_violations, weighted_tv, Grid, ScalarField, VectorField};

/// `sqrt(8) / h`, the norm bound of the discrete gradient.
pub fn gradient_norm_bound(grid: &Grid) -> f64 {
    8f64.sqrt() / grid.h
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    BoundaryHarmonic,
    Zero,
    Random(u64),
    Given(ScalarField),
}

impl Init {
    pub fn label(&self) -> String {
        match self {
            Init::BoundaryHarmonic => "harmonic".into(),
            Init::Zero => "zero".into(),
            Init::Random(seed) => format!("random:{seed}"),
            Init::Given(_) => "given".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop once `gap <= gap_tol * (1 + |primal|)`.
    pub gap_tol: f64,
    pub tau: f64,
    pub sigma_step: f64,
    pub theta: f64,
    pub init: Init,
    /// Iterations between duality-gap evaluations.
    pub check_every: usize,
}

/// Ratio `tau / sigma_step` used by [`SolverConfig::for_grid`].
pub const DEFAULT_STEP_RATIO: f64 = 8.0;

impl SolverConfig {
    /// Defaults for a grid: steps on the stability bound with
    /// `tau / sigma_step = DEFAULT_STEP_RATIO`, `theta = 1`, gap tolerance `1e-4`.
    pub fn for_grid(grid: &Grid) -> Self {
        let (tau, sigma_step) = balanced_steps(grid, DEFAULT_STEP_RATIO);
        Self {
            max_iter: 200_000,
            gap_tol: 1e-4,
            tau,
            sigma_step,
            theta: 1.0,
            init: Init::BoundaryHarmonic,
            check_every: 20,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn step_product(&self, grid: &Grid) -> f64 {
        let l = gradient_norm_bound(grid);
        self.tau * self.sigma_step * l * l
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let product = self.step_product(grid);
        if !(self.tau > 0.0 && self.sigma_step > 0.0) || product > 1.0 + 1e-12 || !product.is_finite() {
            return Err(Error::InvalidStep { product });
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidStep { product: self.theta });
        }
        Ok(())
    }
}

/// Step sizes with `tau * sigma * L^2 = 1` and `tau / sigma = ratio`.
pub fn balanced_steps(grid: &Grid, ratio: f64) -> (f64, f64) {
    let l = gradient_norm_bound(grid);
    let tau = ratio.sqrt() / l;
    let sigma = 1.0 / (ratio.sqrt() * l);
    (tau, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Weighted TV of the returned (clamped) field.
    pub primal: f64,
    /// Lower bound on the optimal value certified by `b`.
    pub dual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Duration,
    /// Active nodes outside `[min f, max f]` before the final clamp.
    pub pre_clamp_violations: usize,
    pub active_nodes: usize,
    /// Area-weighted l2 norm of `div b` over free nodes.
    pub divergence_residual: f64,
    /// Free nodes with zero weight, where the returned values are arbitrary.
    pub zero_weight_nodes: usize,
}

impl SolveReport {
    /// Gap relative to `1 + |primal|`, the stopping measure.
    pub fn relative_gap(&self) -> f64 {
        self.gap / (1.0 + self.primal.abs())
    }

    pub fn violation_fraction(&self) -> f64 {
        self.pre_clamp_violations as f64 / self.active_nodes.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub u: ScalarField,
    pub b: VectorField,
    pub report: SolveReport,
}

/// Radial projection onto `{|p| <= a}` of the edge pair owned by each node.
pub fn project_dual_ball(p: &VectorField, a: &ScalarField) -> Result<VectorField> {
    check_weight(a)?;
    let mut out = p.clone();
    for k in 0..p.grid.len() {
        let (x, y) = project_pair(p.px[k], p.py[k], a.values[k]);
        out.px[k] = x;
        out.py[k] = y;
    }
    Ok(out)
}

#[inline]
fn project_pair(x: f64, y: f64, radius: f64) -> (f64, f64) {
    let n = x.hypot(y);
    if n <= radius {
        (x, y)
    } else if radius > 0.0 {
        let s = radius / n;
        (x * s, y * s)
    } else {
        (0.0, 0.0)
    }
}

/// Pairing `<grad u_f, b>` for an extension `u_f` of the boundary data.
pub fn dual_value(b: &VectorField, u_f: &ScalarField) -> f64 {
    dot_edges(&grad(u_f), b)
}

/// Lower bound on the optimal value for any `b` in the dual ball.
///
/// Equals [`dual_value`] for any extension when `div b` vanishes on free
/// nodes. Otherwise the divergence is paired with the worst value in
/// `[min f, max f]`, which minimizers may be assumed to take.
pub fn dual_bound(b: &VectorField, f: &ScalarField) -> f64 {
    let d = div(b);
    let (lo, hi) = f.boundary_range();
    let mask = &b.mask;
    let mut s = 0.0;
    for k in 0..b.grid.len() {
        if mask.is_boundary(k) {
            s -= f.values[k] * d.values[k];
        } else if mask.is_free(k) {
            let dv = d.values[k];
            s -= if dv > 0.0 { hi * dv } else { lo * dv };
        }
    }
    s * b.grid.cell_area()
}

/// Area-weighted l2 norm of `div b` over free nodes.
pub fn free_divergence_norm(b: &VectorField) -> f64 {
    let d = div(b);
    let s: f64 = (0..b.grid.len())
        .filter(|&k| b.mask.is_free(k))
        .map(|k| d.values[k] * d.values[k])
        .sum();
    (s * b.grid.cell_area()).sqrt()
}

fn initial_field(a: &ScalarField, f: &ScalarField, init: &Init) -> Result<Vec<f64>> {
    let mask = &f.mask;
    let (lo, hi) = f.boundary_range();
    let mut u = match init {
        Init::Zero => vec![0.0; f.grid.len()],
        Init::BoundaryHarmonic => harmonic_extension(f, 1e-10, 100 * f.grid.len())?.values,
        Init::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..f.grid.len())
                .map(|k| {
                    if mask.is_active(k) {
                        lo + (hi - lo) * rng.gen::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        Init::Given(g) => {
            if !g.same_support(a) {
                return Err(Error::GridMismatch);
            }
            g.values.clone()
        }
    };
    for (k, v) in u.iter_mut().enumerate() {
        if mask.is_boundary(k) {
            *v = f.values[k];
        } else if !mask.is_active(k) {
            *v = 0.0;
        }
    }
    Ok(u)
}

/// Solves the weighted least-gradient problem for weight `a` and boundary
/// data `f` (read on boundary nodes only).
///
/// On success the returned `u` equals `f` on the boundary, is clamped to the
/// boundary range, and `b` satisfies `|b| <= a` at every node. If the gap
/// tolerance is not reached within `max_iter`, the last iterate is returned
/// inside [`Error::NotConverged`].
pub fn minimize(a: &ScalarField, f: &ScalarField, cfg: &SolverConfig) -> Result<Reconstruction> {
    if !a.same_support(f) {
        return Err(Error::GridMismatch);
    }
    check_weight(a)?;
    cfg.validate(&a.grid)?;
    if let Some(k) = (0..f.grid.len()).find(|&k| f.mask.is_boundary(k) && !f.values[k].is_finite()) {
        let (i, j) = f.grid.ij(k);
        return Err(Error::InvalidDomain(format!("boundary value at ({i}, {j}) is not finite")));
    }

    let start = Instant::now();
    let grid = a.grid;
    let mask = a.mask.clone();
    let n = grid.len();
    let nx = grid.nx;
    let inv_h = 1.0 / grid.h;
    let tau = cfg.tau;
    let sig = cfg.sigma_step;
    let theta = cfg.theta;

    let mut u = initial_field(a, f, &cfg.init)?;
    let mut ubar = u.clone();
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    let w = &a.values;

    let free: Vec<usize> = (0..n).filter(|&k| mask.is_free(k)).collect();
    let active: Vec<usize> = (0..n).filter(|&k| mask.is_active(k)).collect();
    let xa: Vec<bool> = (0..n).map(|k| mask.x_edge_active(k)).collect();
    let ya: Vec<bool> = (0..n).map(|k| mask.y_edge_active(k)).collect();

    let evaluate = |u: &[f64], bx: &[f64], by: &[f64]| -> (ScalarField, VectorField, f64, f64) {
        let uf = ScalarField {
            grid,
            mask: mask.clone(),
            values: u.to_vec(),
        };
        let b = VectorField {
            grid,
            mask: mask.clone(),
            px: bx.to_vec(),
            py: by.to_vec(),
        };
        let clamped = clamp(&uf, f);
        let primal = weighted_tv(&clamped, a).expect("weight checked");
        let dual = dual_bound(&b, f);
        (uf, b, primal, dual)
    };

    let check_every = cfg.check_every.max(1);
    let mut iterations = 0;
    let mut converged = false;
    let (mut last_u, mut last_b, mut primal, mut dual) = evaluate(&u, &bx, &by);
    if primal - dual <= cfg.gap_tol * (1.0 + primal.abs()) {
        converged = true;
    }

    while !converged && iterations < cfg.max_iter {
        for &k in &active {
            let uk = ubar[k];
            let gx = if xa[k] { (ubar[k + 1] - uk) * inv_h } else { 0.0 };
            let gy = if ya[k] { (ubar[k + nx] - uk) * inv_h } else { 0.0 };
            let (qx, qy) = project_pair(bx[k] + sig * gx, by[k] + sig * gy, w[k]);
            bx[k] = qx;
            by[k] = qy;
        }
        for &k in &free {
            // Free nodes have all four neighbours active.
            let d = (bx[k] - bx[k - 1] + by[k] - by[k - nx]) * inv_h;
            let old = u[k];
            let new = old + tau * d;
            u[k] = new;
            ubar[k] = new + theta * (new - old);
        }
        iterations += 1;
        if iterations % check_every == 0 || iterations == cfg.max_iter {
            let (lu, lb, p, d) = evaluate(&u, &bx, &by);
            last_u = lu;
            last_b = lb;
            primal = p;
            dual = d;
            converged = primal - dual <= cfg.gap_tol * (1.0 + primal.abs());
        }
    }

    let pre_clamp_violations = range_violations(&last_u, f);
    let u_out = clamp(&last_u, f);
    let zero_weight_nodes = free.iter().filter(|&&k| w[k] == 0.0).count();
    let report = SolveReport {
        primal,
        dual,
        gap: primal - dual,
        iterations,
        converged,
        wall_time: start.elapsed(),
        pre_clamp_violations,
        active_nodes: active.len(),
        divergence_residual: free_divergence_norm(&last_b),
        zero_weight_nodes,
    };
    let rec = Reconstruction {
        u: u_out,
        b: last_b,
        report,
    };
    if converged {
        Ok(rec)
    } else {
        Err(Error::NotConverged(Box::new(rec)))
    }
}
