//! Finite-volume solver for `div(sigma grad u) = 0` with Dirichlet data, and
//! synthesis of the interior datum `a = |J|`.
//!
//! The 5-point scheme uses harmonic-mean edge conductances. Inclusions are
//! handled by surrogate conductivities: conducting nodes carry `sigma_inf`,
//! insulating nodes carry `sigma_ins`, and the equipotential / zero-flux
//! conditions are checked after the solve.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{grad, Grid, Mask, NodeKind, ScalarField, VectorField};

/// Required contrast between the surrogate and the background conductivity.
pub const MIN_SURROGATE_CONTRAST: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub grid: Grid,
    pub mask: Arc<Mask>,
    pub sigma: ScalarField,
    /// Dirichlet data; only boundary nodes are read.
    pub f: ScalarField,
    pub sigma_inf: f64,
    pub sigma_ins: f64,
}

impl DomainSpec {
    /// Surrogates default to a contrast of `1e6` around the background range.
    pub fn new(sigma: ScalarField, f: ScalarField) -> Result<Self> {
        if !sigma.same_support(&f) {
            return Err(Error::GridMismatch);
        }
        let (lo, hi) = background_range(&sigma);
        let spec = Self {
            grid: sigma.grid,
            mask: sigma.mask.clone(),
            sigma_inf: 1e6 * hi,
            sigma_ins: 1e-6 * lo,
            sigma,
            f,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_surrogates(mut self, sigma_inf: f64, sigma_ins: f64) -> Result<Self> {
        self.sigma_inf = sigma_inf;
        self.sigma_ins = sigma_ins;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mask = &self.mask;
        for k in 0..self.grid.len() {
            if !mask.is_active(k) {
                continue;
            }
            let (i, j) = self.grid.ij(k);
            let s = self.sigma.values[k];
            let is_inclusion = matches!(mask.kind(k), NodeKind::Insulating | NodeKind::Conducting);
            if !is_inclusion && !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidDomain(format!(
                    "conductivity must be positive at ({i}, {j}), got {s}"
                )));
            }
            if mask.is_boundary(k) && !self.f.values[k].is_finite() {
                return Err(Error::InvalidDomain(format!(
                    "boundary value at ({i}, {j}) is not finite"
                )));
            }
        }
        if mask.has_inclusions() {
            let (lo, hi) = background_range(&self.sigma);
            if mask.count(NodeKind::Conducting) > 0 && self.sigma_inf < MIN_SURROGATE_CONTRAST * hi {
                return Err(Error::InvalidDomain(format!(
                    "sigma_inf = {} must be at least {:e} x max sigma",
                    self.sigma_inf, MIN_SURROGATE_CONTRAST
                )));
            }
            if mask.count(NodeKind::Insulating) > 0
                && !(self.sigma_ins > 0.0 && self.sigma_ins <= lo / MIN_SURROGATE_CONTRAST)
            {
                return Err(Error::InvalidDomain(format!(
                    "sigma_ins = {} must be positive and at most {:e} x min sigma",
                    self.sigma_ins,
                    1.0 / MIN_SURROGATE_CONTRAST
                )));
            }
        }
        Ok(())
    }

    /// Conductivity with the surrogate values substituted on inclusion nodes.
    pub fn effective_sigma(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|k| match self.mask.kind(k) {
                NodeKind::Exterior => 0.0,
                NodeKind::Conducting => self.sigma_inf,
                NodeKind::Insulating => self.sigma_ins,
                _ => self.sigma.values[k],
            })
            .collect();
        ScalarField {
            grid: self.grid,
            mask: self.mask.clone(),
            values,
        }
    }
}

/// Min and max of sigma over active nodes outside inclusions.
fn background_range(sigma: &ScalarField) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..sigma.grid.len() {
        if matches!(sigma.mask.kind(k), NodeKind::Interior | NodeKind::Boundary) {
            lo = lo.min(sigma.values[k]);
            hi = hi.max(sigma.values[k]);
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub id: u32,
    pub nodes: usize,
    pub mean: f64,
    /// Max minus min of `u` over the component.
    pub spread: f64,
    /// Net current entering the component through its outer edges.
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionReport {
    pub conducting: Vec<ComponentReport>,
    /// Net current entering the insulating set.
    pub insulating_flux: f64,
    /// Sum of absolute edge currents across the outer boundary.
    pub boundary_flux_scale: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub u: ScalarField,
    /// `J = -sigma grad u` on edges.
    pub current: VectorField,
    /// `|J|` of the node-averaged current.
    pub a: ScalarField,
    /// Conductivity the system was assembled with.
    pub sigma: ScalarField,
    pub residual_norm: f64,
    pub iterations: usize,
    pub inclusions: Option<InclusionReport>,
}

#[inline]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Edge conductances for the `px` and `py` edge slots.
pub fn edge_conductance(sigma: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let grid = sigma.grid;
    let mask = &sigma.mask;
    let nx = grid.nx;
    let mut cx = vec![0.0; grid.len()];
    let mut cy = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if mask.x_edge_active(k) {
            cx[k] = harmonic_mean(sigma.values[k], sigma.values[k + 1]);
        }
        if mask.y_edge_active(k) {
            cy[k] = harmonic_mean(sigma.values[k], sigma.values[k + nx]);
        }
    }
    (cx, cy)
}

/// Matrix-free operator for the free nodes; boundary nodes are eliminated.
struct Stencil<'a> {
    mask: &'a Mask,
    nx: usize,
    cx: Vec<f64>,
    cy: Vec<f64>,
    diag: Vec<f64>,
}

impl<'a> Stencil<'a> {
    fn new(sigma: &'a ScalarField) -> Result<Self> {
        let (cx, cy) = edge_conductance(sigma);
        let grid = sigma.grid;
        let nx = grid.nx;
        let mask = sigma.mask.as_ref();
        let mut diag = vec![0.0; grid.len()];
        for (k, d) in diag.iter_mut().enumerate() {
            if !mask.is_free(k) {
                continue;
            }
            // Free nodes always have four active neighbours.
            *d = cx[k] + cx[k - 1] + cy[k] + cy[k - nx];
            if !(*d > 0.0) {
                let (i, j) = grid.ij(k);
                return Err(Error::SingularSystem { i, j });
            }
        }
        Ok(Self {
            mask,
            nx,
            cx,
            cy,
            diag,
        })
    }

    /// `out = A x` on free nodes, treating non-free entries of `x` as zero.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        let free = |k: usize| if self.mask.is_free(k) { x[k] } else { 0.0 };
        for k in 0..x.len() {
            if !self.mask.is_free(k) {
                out[k] = 0.0;
                continue;
            }
            out[k] = self.diag[k] * x[k]
                - self.cx[k] * free(k + 1)
                - self.cx[k - 1] * free(k - 1)
                - self.cy[k] * free(k + nx)
                - self.cy[k - nx] * free(k - nx);
        }
    }

    /// Right-hand side from the Dirichlet couplings.
    fn rhs(&self, f: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let fixed = |k: usize| if self.mask.is_boundary(k) { f[k] } else { 0.0 };
        (0..f.len())
            .map(|k| {
                if !self.mask.is_free(k) {
                    return 0.0;
                }
                self.cx[k] * fixed(k + 1)
                    + self.cx[k - 1] * fixed(k - 1)
                    + self.cy[k] * fixed(k + nx)
                    + self.cy[k - nx] * fixed(k - nx)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. Returns the free-node solution,
/// the relative residual and the iteration count.
fn pcg(stencil: &Stencil, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let inv_diag: Vec<f64> = stencil
        .diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        stencil.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            // Recompute the true residual to guard against drift.
            stencil.apply(&x, &mut ap);
            let true_rel = b
                .iter()
                .zip(&ap)
                .map(|(b, ax)| (b - ax) * (b - ax))
                .sum::<f64>()
                .sqrt()
                / b_norm;
            if true_rel <= tol {
                return Ok((x, true_rel, it + 1));
            }
            for k in 0..n {
                r[k] = b[k] - ap[k];
            }
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

fn solve_with_sigma(spec: &DomainSpec, sigma: ScalarField, tol: f64, max_iter: usize) -> Result<ForwardSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidDomain(format!("tolerance must be positive, got {tol}")));
    }
    let stencil = Stencil::new(&sigma)?;
    let rhs = stencil.rhs(&spec.f.values);
    let (x, residual_norm, iterations) = pcg(&stencil, &rhs, tol, max_iter)?;
    let values = (0..spec.grid.len())
        .map(|k| match spec.mask.kind(k) {
            NodeKind::Exterior => 0.0,
            NodeKind::Boundary => spec.f.values[k],
            _ => x[k],
        })
        .collect();
    let u = ScalarField {
        grid: spec.grid,
        mask: spec.mask.clone(),
        values,
    };
    let (current, a) = current_density(&u, &sigma)?;
    Ok(ForwardSolution {
        u,
        current,
        a,
        sigma,
        residual_norm,
        iterations,
        inclusions: None,
    })
}

/// Solves the plain Dirichlet problem with `spec.sigma` on every node.
pub fn solve_conductivity(spec: &DomainSpec, tol: f64, max_iter: usize) -> Result<ForwardSolution> {
    spec.validate()?;
    let mask = &spec.mask;
    if (0..spec.grid.len()).any(|k| mask.is_active(k) && !(spec.sigma.values[k] > 0.0)) {
        return Err(Error::InvalidDomain(
            "plain solve needs positive conductivity on every node; use solve_with_inclusions".into(),
        ));
    }
    solve_with_sigma(spec, spec.sigma.clone(), tol, max_iter)
}

/// Solves with surrogate conductivities on the inclusion nodes and checks that
/// every conducting component is equipotential to within `spread_tol`.
pub fn solve_with_inclusions(
    spec: &DomainSpec,
    tol: f64,
    max_iter: usize,
    spread_tol: f64,
) -> Result<ForwardSolution> {
    spec.validate()?;
    let mut sol = solve_with_sigma(spec, spec.effective_sigma(), tol, max_iter)?;
    if !spec.mask.has_inclusions() {
        return Ok(sol);
    }
    let report = inclusion_report(&sol.u, &sol.sigma);
    if let Some(c) = report.conducting.iter().find(|c| c.spread > spread_tol) {
        return Err(Error::InclusionSpreadExceeded {
            component: c.id,
            spread: c.spread,
            tolerance: spread_tol,
        });
    }
    sol.inclusions = Some(report);
    Ok(sol)
}

/// Current `J = -sigma_e grad u` on edges and `a = |J|` at nodes.
pub fn current_density(u: &ScalarField, sigma: &ScalarField) -> Result<(VectorField, ScalarField)> {
    if !u.same_support(sigma) {
        return Err(Error::GridMismatch);
    }
    let (cx, cy) = edge_conductance(sigma);
    let g = grad(u);
    let px = g.px.iter().zip(&cx).map(|(g, c)| -c * g).collect();
    let py = g.py.iter().zip(&cy).map(|(g, c)| -c * g).collect();
    let current = VectorField {
        grid: u.grid,
        mask: u.mask.clone(),
        px,
        py,
    };
    let values = (0..u.grid.len())
        .map(|k| {
            if u.mask.is_active(k) {
                let (jx, jy) = current.node_average(k);
                jx.hypot(jy)
            } else {
                0.0
            }
        })
        .collect();
    let a = ScalarField {
        grid: u.grid,
        mask: u.mask.clone(),
        values,
    };
    Ok((current, a))
}

/// Net current through `edges` from nodes satisfying `inside` to the rest.
fn net_inflow(u: &ScalarField, cx: &[f64], cy: &[f64], inside: impl Fn(usize) -> bool) -> (f64, f64) {
    let nx = u.grid.nx;
    let mut net = 0.0;
    let mut abs = 0.0;
    for k in 0..u.grid.len() {
        if u.mask.x_edge_active(k) && inside(k) != inside(k + 1) {
            let (inner, outer) = if inside(k) { (k, k + 1) } else { (k + 1, k) };
            let q = cx[k] * (u.values[outer] - u.values[inner]);
            net += q;
            abs += q.abs();
        }
        if u.mask.y_edge_active(k) && inside(k) != inside(k + nx) {
            let (inner, outer) = if inside(k) { (k, k + nx) } else { (k + nx, k) };
            let q = cy[k] * (u.values[outer] - u.values[inner]);
            net += q;
            abs += q.abs();
        }
    }
    (net, abs)
}

/// Net current leaving the domain through the boundary ring and the sum of
/// absolute edge currents there. Boundary-to-boundary edges are tangential
/// and excluded.
pub fn boundary_flux(u: &ScalarField, sigma: &ScalarField) -> (f64, f64) {
    let (cx, cy) = edge_conductance(sigma);
    let mask = &u.mask;
    let (net, abs) = net_inflow(u, &cx, &cy, |k| mask.is_free(k));
    // Inflow to the free set equals outflow through the boundary nodes.
    (net, abs)
}

pub fn inclusion_report(u: &ScalarField, sigma: &ScalarField) -> InclusionReport {
    let mask = &u.mask;
    let (cx, cy) = edge_conductance(sigma);
    let (_, boundary_flux_scale) = net_inflow(u, &cx, &cy, |k| mask.is_free(k));
    let mut conducting = Vec::new();
    for id in 1..=mask.n_components() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0;
        for k in 0..u.grid.len() {
            if mask.component(k) == Some(id) {
                let v = u.values[k];
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
                count += 1;
            }
        }
        let (flux, _) = net_inflow(u, &cx, &cy, |k| mask.component(k) == Some(id));
        conducting.push(ComponentReport {
            id,
            nodes: count,
            mean: sum / count as f64,
            spread: hi - lo,
            flux,
        });
    }
    let (insulating_flux, _) = net_inflow(u, &cx, &cy, |k| mask.kind(k) == NodeKind::Insulating);
    InclusionReport {
        conducting,
        insulating_flux,
        boundary_flux_scale,
    }
}

/// Harmonic extension of the boundary data (`sigma = 1`).
pub fn harmonic_extension(f: &ScalarField, tol: f64, max_iter: usize) -> Result<ScalarField> {
    let sigma = f.map(|_| 1.0);
    let spec = DomainSpec {
        grid: f.grid,
        mask: f.mask.clone(),
        sigma: sigma.clone(),
        f: f.clone(),
        sigma_inf: 1.0,
        sigma_ins: 1.0,
    };
    Ok(solve_with_sigma(&spec, sigma, tol, max_iter)?.u)
}

/// Multiplicative uniform noise: `a (1 + level xi)` with `xi ~ U[-1, 1]`
/// drawn from ChaCha8 in row-major order over active nodes, clipped at zero.
pub fn add_noise(a: &ScalarField, level: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = a.clone();
    for (k, v) in out.values.iter_mut().enumerate() {
        if !a.mask.is_active(k) {
            continue;
        }
        let xi: f64 = rng.gen_range(-1.0..=1.0);
        if level != 0.0 {
            *v = (*v * (1.0 + level * xi)).max(0.0);
        }
    }
    out
}

/// Additive uniform noise `level * xi` on the boundary nodes of `f`.
pub fn add_boundary_noise(f: &ScalarField, level: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = f.clone();
    for (k, v) in out.values.iter_mut().enumerate() {
        if !f.mask.is_boundary(k) {
            continue;
        }
        let xi: f64 = rng.gen_range(-1.0..=1.0);
        if level != 0.0 {
            *v += level * xi;
        }
    }
    out
}

/// Dense description of the assembled free-node system, for small grids.
/// Returns the free-node ordering, the row-major matrix and the right-hand side.
pub fn assemble_dense(spec: &DomainSpec, sigma: &ScalarField) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let stencil = Stencil::new(sigma)?;
    let free: Vec<usize> = (0..spec.grid.len()).filter(|&k| spec.mask.is_free(k)).collect();
    let n = free.len();
    let mut pos = vec![usize::MAX; spec.grid.len()];
    for (r, &k) in free.iter().enumerate() {
        pos[k] = r;
    }
    let mut mat = vec![0.0; n * n];
    let mut e = vec![0.0; spec.grid.len()];
    let mut col = vec![0.0; spec.grid.len()];
    for (c, &k) in free.iter().enumerate() {
        e[k] = 1.0;
        stencil.apply(&e, &mut col);
        e[k] = 0.0;
        for (r, &kr) in free.iter().enumerate() {
            mat[r * n + c] = col[kr];
        }
    }
    let rhs_full = stencil.rhs(&spec.f.values);
    let rhs = free.iter().map(|&k| rhs_full[k]).collect();
    Ok((free, mat, rhs))
}
