//! Post-hoc optimality certificates for a candidate pair `(u, b)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{div, dot_edges, grad, weighted_tv, NodeKind, ScalarField, VectorField};
use crate::minimizer::dual_bound;

/// Thresholds used to judge a certificate. Embedded in every [`Certificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TolSpec {
    /// `delta = delta_rel * max a` separates the support of `a`.
    pub delta_rel: f64,
    /// Gradient degeneracy threshold; `None` selects [`gradient_threshold`].
    pub eps_g: Option<f64>,
    pub angle_deg: f64,
    pub gap_tol: f64,
    pub dual_infeasibility_tol: f64,
    /// Divergence residual allowed as a fraction of `||b||`.
    pub divergence_tol_rel: f64,
    /// Minimum fraction of eligible nodes within `angle_deg`.
    pub alignment_min: f64,
    /// `|b| > positivity_floor * a` required at free nodes with `a > delta`.
    pub positivity_floor: f64,
}

impl Default for TolSpec {
    fn default() -> Self {
        Self {
            delta_rel: 1e-3,
            eps_g: None,
            angle_deg: 5.0,
            gap_tol: 1e-3,
            dual_infeasibility_tol: 1e-12,
            divergence_tol_rel: 1e-2,
            alignment_min: 0.99,
            positivity_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    pub gap_relative: f64,
    /// Max over nodes of `(|b| - a)+`.
    pub dual_infeasibility_max: f64,
    /// Area-weighted l2 norm of `div b` away from the boundary and insulating collars.
    pub divergence_residual: f64,
    /// Area-weighted l2 norm of `b`.
    pub b_norm: f64,
    pub alignment_score: f64,
    pub aligned_eligible: usize,
    pub positivity_ok: bool,
    pub delta: f64,
    pub eps_g: f64,
    pub tol: TolSpec,
}

impl Certificate {
    /// Names of the thresholds this certificate fails.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.gap_relative <= self.tol.gap_tol) {
            out.push("gap");
        }
        if !(self.dual_infeasibility_max <= self.tol.dual_infeasibility_tol) {
            out.push("dual_feasibility");
        }
        if !(self.divergence_residual <= self.tol.divergence_tol_rel * self.b_norm) {
            out.push("divergence");
        }
        if !(self.alignment_score >= self.tol.alignment_min) {
            out.push("alignment");
        }
        if !self.positivity_ok {
            out.push("positivity");
        }
        out
    }

    pub fn passes(&self) -> bool {
        self.failures().is_empty()
    }
}

impl fmt::Display for Certificate {
    /// Flat `key=value` block.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "primal={:e}", self.primal)?;
        writeln!(f, "dual={:e}", self.dual)?;
        writeln!(f, "gap_relative={:e}", self.gap_relative)?;
        writeln!(f, "dual_infeasibility_max={:e}", self.dual_infeasibility_max)?;
        writeln!(f, "divergence_residual={:e}", self.divergence_residual)?;
        writeln!(f, "b_norm={:e}", self.b_norm)?;
        writeln!(f, "alignment_score={}", self.alignment_score)?;
        writeln!(f, "alignment_nodes={}", self.aligned_eligible)?;
        writeln!(f, "positivity_ok={}", self.positivity_ok)?;
        writeln!(f, "delta={:e}", self.delta)?;
        writeln!(f, "eps_g={:e}", self.eps_g)?;
        writeln!(f, "tol.delta_rel={:e}", self.tol.delta_rel)?;
        writeln!(f, "tol.angle_deg={}", self.tol.angle_deg)?;
        writeln!(f, "tol.gap={:e}", self.tol.gap_tol)?;
        writeln!(f, "tol.dual_infeasibility={:e}", self.tol.dual_infeasibility_tol)?;
        writeln!(f, "tol.divergence_rel={:e}", self.tol.divergence_tol_rel)?;
        writeln!(f, "tol.alignment_min={}", self.tol.alignment_min)?;
        writeln!(f, "tol.positivity_floor={:e}", self.tol.positivity_floor)?;
        let failures = self.failures();
        writeln!(f, "failures={}", if failures.is_empty() { "none".to_string() } else { failures.join(",") })?;
        writeln!(f, "pass={}", failures.is_empty())
    }
}

/// `1e-2 * median |grad u|` over nodes with `a > delta`, ignoring nodes whose
/// gradient is below `1e-3` of the largest one (flat plateaus would otherwise
/// drive the median to zero).
pub fn gradient_threshold(u: &ScalarField, a: &ScalarField, delta: f64) -> f64 {
    let g = grad(u);
    let mags: Vec<f64> = (0..u.grid.len())
        .filter(|&k| u.mask.is_active(k) && a.values[k] > delta)
        .map(|k| g.magnitude_at(k))
        .collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    let mut big: Vec<f64> = mags.into_iter().filter(|&m| m > 1e-3 * max).collect();
    if big.is_empty() {
        return 0.0;
    }
    big.sort_by(|x, y| x.total_cmp(y));
    1e-2 * big[big.len() / 2]
}

/// Nodes excluded from the divergence residual: boundary and insulating nodes
/// and their 4-neighbours.
fn in_collar(field: &VectorField, k: usize) -> bool {
    let mask = &field.mask;
    let barrier = |n: usize| matches!(mask.kind(n), NodeKind::Boundary | NodeKind::Insulating | NodeKind::Exterior);
    !mask.is_free(k) || barrier(k) || field.grid.neighbors4(k).any(barrier)
}

pub fn divergence_residual(b: &VectorField) -> f64 {
    let d = div(b);
    let s: f64 = (0..b.grid.len())
        .filter(|&k| !in_collar(b, k))
        .map(|k| d.values[k] * d.values[k])
        .sum();
    (s * b.grid.cell_area()).sqrt()
}

pub fn vector_norm(b: &VectorField) -> f64 {
    let s: f64 = (0..b.grid.len())
        .filter(|&k| b.mask.is_active(k))
        .map(|k| b.px[k] * b.px[k] + b.py[k] * b.py[k])
        .sum();
    (s * b.grid.cell_area()).sqrt()
}

pub fn certify(u: &ScalarField, b: &VectorField, a: &ScalarField, f: &ScalarField, tol: &TolSpec) -> Result<Certificate> {
    if !u.same_support(a) || !u.same_support(f) || b.grid != u.grid || *b.mask != *u.mask {
        return Err(Error::GridMismatch);
    }
    let primal = weighted_tv(u, a)?;
    let dual = dual_bound(b, f);
    let gap = primal - dual;
    let gap_relative = if primal.abs() > 0.0 { gap / primal.abs() } else { gap.abs() };

    let n = u.grid.len();
    let mask = &u.mask;
    let max_a = a.max_active().max(0.0);
    let delta = tol.delta_rel * max_a;
    let eps_g = tol.eps_g.unwrap_or_else(|| gradient_threshold(u, a, delta));
    let g = grad(u);
    let cos_max = tol.angle_deg.to_radians().cos();

    let mut infeasibility: f64 = 0.0;
    let mut eligible = 0usize;
    let mut aligned = 0usize;
    let mut positivity_ok = true;
    for k in 0..n {
        if !mask.is_active(k) {
            continue;
        }
        let bm = b.magnitude_at(k);
        infeasibility = infeasibility.max(bm - a.values[k]);
        if a.values[k] > delta {
            // Boundary nodes may own only a tangential edge with no data jump.
            if mask.is_free(k) && !(bm > tol.positivity_floor * a.values[k]) {
                positivity_ok = false;
            }
            let gm = g.magnitude_at(k);
            if gm > eps_g {
                eligible += 1;
                let cos = (b.px[k] * g.px[k] + b.py[k] * g.py[k]) / (bm * gm).max(1e-300);
                if cos >= cos_max {
                    aligned += 1;
                }
            }
        }
    }

    Ok(Certificate {
        primal,
        dual,
        gap_relative,
        dual_infeasibility_max: infeasibility.max(0.0),
        divergence_residual: divergence_residual(b),
        b_norm: vector_norm(b),
        alignment_score: if eligible == 0 { 1.0 } else { aligned as f64 / eligible as f64 },
        aligned_eligible: eligible,
        positivity_ok,
        delta,
        eps_g,
        tol: tol.clone(),
    })
}

/// Both sides of the discrete Gauss-Green identity for `w = f` on the
/// boundary and `u` elsewhere: `(-h^2 sum_bnd f div b, h^2 sum_free u div b + <b, grad w>)`.
pub fn gauss_green_terms(u: &ScalarField, b: &VectorField, f: &ScalarField) -> (f64, f64) {
    let mask = &u.mask;
    let mut w = u.clone();
    for k in 0..w.grid.len() {
        if mask.is_boundary(k) {
            w.values[k] = f.values[k];
        }
    }
    let d = div(b);
    let mut boundary = 0.0;
    let mut interior = 0.0;
    for k in 0..w.grid.len() {
        if mask.is_boundary(k) {
            boundary -= w.values[k] * d.values[k];
        } else if mask.is_free(k) {
            interior += w.values[k] * d.values[k];
        }
    }
    let area = w.grid.cell_area();
    (boundary * area, interior * area + dot_edges(b, &grad(&w)))
}

/// Relative defect `|boundary - interior| / (1 + |boundary|)` of the identity.
pub fn gauss_green_check(u: &ScalarField, b: &VectorField, f: &ScalarField) -> f64 {
    let (boundary, interior) = gauss_green_terms(u, b, f);
    (boundary - interior).abs() / (1.0 + boundary.abs())
}
