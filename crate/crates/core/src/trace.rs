//! Transfer of analytic boundary data to the staircase boundary of a disk.
//!
//! Boundary nodes of a masked disk sit up to one cell inside the circle, so
//! evaluating `f` at the node itself leaves an O(h) error in the data. For a
//! least-gradient solution the value at a boundary node is carried along its
//! level line, so the node receives `f` at the point where the discrete level
//! line through it meets the circle. The level direction comes from the
//! previous reconstruction, and the solve is repeated warm-started.

use crate::error::{Error, Result};
use crate::grid::{grad, ScalarField};
use crate::minimizer::{minimize, Init, Reconstruction, SolverConfig};

pub struct DiskTrace<F> {
    pub center: (f64, f64),
    pub radius: f64,
    pub f: F,
}

impl<F: Fn(f64, f64) -> f64> DiskTrace<F> {
    pub fn new(center: (f64, f64), radius: f64, f: F) -> Self {
        Self { center, radius, f }
    }

    /// `f` evaluated at each boundary node.
    pub fn sample_nodes(&self, template: &ScalarField) -> ScalarField {
        let mut out = ScalarField::zeros(template.grid, template.mask.clone());
        for k in 0..template.grid.len() {
            if template.mask.is_boundary(k) {
                let (i, j) = template.grid.ij(k);
                let (x, y) = template.grid.coord(i, j);
                out.values[k] = (self.f)(x, y);
            }
        }
        out
    }

    /// Point where the line through `(x, y)` with direction `t` meets the
    /// circle, taking the nearer intersection.
    fn hit(&self, x: f64, y: f64, t: (f64, f64)) -> Option<(f64, f64)> {
        let (px, py) = (x - self.center.0, y - self.center.1);
        let pt = px * t.0 + py * t.1;
        let c = px * px + py * py - self.radius * self.radius;
        let disc = pt * pt - c;
        if disc < 0.0 {
            return None;
        }
        let r = disc.sqrt();
        let (s1, s2) = (-pt + r, -pt - r);
        let s = if s1.abs() <= s2.abs() { s1 } else { s2 };
        Some((x + s * t.0, y + s * t.1))
    }

    /// Boundary data resampled along the level lines of `u`. Nodes without a
    /// usable gradient keep their value from `f`.
    pub fn transfer(&self, u: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
        if !u.same_support(f) {
            return Err(Error::GridMismatch);
        }
        let grid = u.grid;
        let g = grad(u);
        let scale = g.magnitude().max_active().max(1e-300);
        let mut out = f.clone();
        for k in 0..grid.len() {
            if !u.mask.is_boundary(k) {
                continue;
            }
            let (mut gx, mut gy) = (0.0, 0.0);
            for n in grid.neighbors8(k).chain(std::iter::once(k)) {
                if u.mask.is_active(n) {
                    let (a, b) = g.node_average(n);
                    gx += a;
                    gy += b;
                }
            }
            let norm = gx.hypot(gy);
            if norm <= 1e-8 * scale {
                continue;
            }
            let (i, j) = grid.ij(k);
            let (x, y) = grid.coord(i, j);
            if let Some((hx, hy)) = self.hit(x, y, (-gy / norm, gx / norm)) {
                out.values[k] = (self.f)(hx, hy);
            }
        }
        Ok(out)
    }
}

/// Reconstruction followed by `passes` rounds of level-line trace transfer.
/// Returns the final reconstruction and the boundary data it was solved with.
pub fn minimize_with_trace<F: Fn(f64, f64) -> f64>(
    a: &ScalarField,
    trace: &DiskTrace<F>,
    cfg: &SolverConfig,
    passes: usize,
) -> Result<(Reconstruction, ScalarField)> {
    let mut f = trace.sample_nodes(a);
    let mut rec = minimize(a, &f, cfg)?;
    for _ in 0..passes {
        f = trace.transfer(&rec.u, &f)?;
        let warm = cfg.clone().with_init(Init::Given(rec.u.clone()));
        rec = minimize(a, &f, &warm)?;
    }
    Ok((rec, f))
}
