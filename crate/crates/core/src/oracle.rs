//! Closed-form references, named phantoms and conductivity recovery.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{solve_conductivity, solve_with_inclusions, DomainSpec, ForwardSolution};
use crate::grid::{grad, Grid, Mask, NodeKind, ScalarField};

/// Least-gradient minimizer on the unit disk for `f = x^2 - y^2`, `a = 1`,
/// with a flat plateau on the central square of half-width `1/sqrt(2)`.
pub fn example1_minimizer(x: f64, y: f64) -> Result<f64> {
    if x * x + y * y > 1.0 + 1e-12 {
        return Err(Error::OutsideDomain { x, y });
    }
    let s = FRAC_1_SQRT_2;
    Ok(if x.abs() >= s && y.abs() <= s {
        2.0 * x * x - 1.0
    } else if x.abs() < s && y.abs() < s {
        0.0
    } else {
        1.0 - 2.0 * y * y
    })
}

/// `exp(-4 r^2)`: a field whose top level sets are interior islands.
pub fn radial_bump(x: f64, y: f64) -> f64 {
    (-4.0 * (x * x + y * y)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Unit disk inside `[-1, 1]^2`.
    Disk,
    /// The full square `[-1, 1]^2`.
    Square,
}

impl Domain {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "disk" => Ok(Self::Disk),
            "square" => Ok(Self::Square),
            other => Err(Error::InvalidDomain(format!("unknown domain '{other}' (expected disk or square)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Disk => "disk",
            Self::Square => "square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phantom {
    /// `a = 1`, `f = x^2 - y^2` on the unit disk.
    Example1,
    /// The example1 geometry with the central square as a conducting inclusion.
    Example1Conducting,
    /// `sigma = 1 + exp(-8 r^2)`, `f = x`.
    SmoothBump,
    /// `sigma = 2` in an off-centre disk, 1 elsewhere, `f = x`.
    PiecewiseDisk,
    /// Insulating central disk of radius 0.3, `sigma = 1`, `f = x`.
    InsulatingDisk,
}

pub const PHANTOM_NAMES: [&str; 5] = ["example1", "example1-oinf", "bump", "piecewise", "insulating"];

impl Phantom {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "example1" => Self::Example1,
            "example1-oinf" => Self::Example1Conducting,
            "bump" => Self::SmoothBump,
            "piecewise" => Self::PiecewiseDisk,
            "insulating" => Self::InsulatingDisk,
            other => return Err(Error::UnknownPhantom(other.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example1Conducting => "example1-oinf",
            Self::SmoothBump => "bump",
            Self::PiecewiseDisk => "piecewise",
            Self::InsulatingDisk => "insulating",
        }
    }

    /// `n x n` nodes on `[-1, 1]^2`.
    pub fn grid(self, n: usize) -> Result<Grid> {
        Grid::square(n, -1.0, 1.0)
    }

    pub fn mask(self, grid: &Grid) -> Result<Arc<Mask>> {
        self.mask_on(grid, Domain::Disk)
    }

    pub fn mask_on(self, grid: &Grid, domain: Domain) -> Result<Arc<Mask>> {
        let base = match domain {
            Domain::Disk => Mask::disk(grid, (0.0, 0.0), 1.0)?,
            Domain::Square => Mask::square(grid.nx, grid.ny)?,
        };
        let mask = match self {
            Self::Example1Conducting => base.with_inclusions(grid, |_, _| false, |x, y| {
                x.abs() < FRAC_1_SQRT_2 && y.abs() < FRAC_1_SQRT_2
            })?,
            Self::InsulatingDisk => base.with_inclusions(grid, |x, y| x * x + y * y < 0.09, |_, _| false)?,
            _ => base,
        };
        Ok(Arc::new(mask))
    }

    pub fn sigma(self, x: f64, y: f64) -> f64 {
        match self {
            Self::SmoothBump => 1.0 + (-8.0 * (x * x + y * y)).exp(),
            Self::PiecewiseDisk => {
                if (x - 0.2).powi(2) + y * y < 0.09 {
                    2.0
                } else {
                    1.0
                }
            }
            _ => 1.0,
        }
    }

    pub fn boundary_value(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Example1 | Self::Example1Conducting => x * x - y * y,
            _ => x,
        }
    }

    pub fn closed_form(self, x: f64, y: f64) -> Option<f64> {
        match self {
            Self::Example1 | Self::Example1Conducting => example1_minimizer(x, y).ok(),
            _ => None,
        }
    }

    /// Forward problem on an `n`-node grid.
    pub fn domain_spec(self, n: usize) -> Result<DomainSpec> {
        self.domain_spec_on(n, Domain::Disk)
    }

    pub fn domain_spec_on(self, n: usize, domain: Domain) -> Result<DomainSpec> {
        let grid = self.grid(n)?;
        let mask = self.mask_on(&grid, domain)?;
        let sigma = ScalarField::from_fn(grid, mask.clone(), |x, y| self.sigma(x, y));
        let f = ScalarField::from_fn(grid, mask, |x, y| self.boundary_value(x, y));
        DomainSpec::new(sigma, f)
    }

    /// Interior data `(a, f)` and, when available, the reference potential.
    ///
    /// The example1 phantom uses `a = 1` with the closed form as reference; every other
    /// phantom synthesizes `a = |J|` from a forward solve.
    pub fn data(self, n: usize, tol: f64, max_iter: usize) -> Result<PhantomData> {
        self.data_on(n, Domain::Disk, tol, max_iter)
    }

    /// The example1 phantom exists only on the disk.
    pub fn data_on(self, n: usize, domain: Domain, tol: f64, max_iter: usize) -> Result<PhantomData> {
        if self == Self::Example1 && domain != Domain::Disk {
            return Err(Error::InvalidDomain("example1 is defined on the disk only".into()));
        }
        let spec = self.domain_spec_on(n, domain)?;
        match self {
            Self::Example1 => {
                let a = spec.f.map(|_| 1.0);
                let reference = ScalarField::from_fn(spec.grid, spec.mask.clone(), |x, y| {
                    example1_minimizer(x, y).unwrap_or(0.0)
                });
                Ok(PhantomData {
                    phantom: self,
                    a,
                    f: spec.f.clone(),
                    reference,
                    forward: None,
                    spec,
                })
            }
            _ => {
                let sol = if spec.mask.has_inclusions() {
                    solve_with_inclusions(&spec, tol, max_iter, 1e-3)?
                } else {
                    solve_conductivity(&spec, tol, max_iter)?
                };
                Ok(PhantomData {
                    phantom: self,
                    a: sol.a.clone(),
                    f: spec.f.clone(),
                    reference: sol.u.clone(),
                    forward: Some(sol),
                    spec,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomData {
    pub phantom: Phantom,
    pub spec: DomainSpec,
    pub a: ScalarField,
    pub f: ScalarField,
    /// Closed form or forward potential.
    pub reference: ScalarField,
    pub forward: Option<ForwardSolution>,
}

#[derive(Debug, Clone)]
pub struct SigmaEstimate {
    pub sigma: ScalarField,
    pub determined: Vec<bool>,
}

impl SigmaEstimate {
    pub fn determined_count(&self) -> usize {
        self.determined.iter().filter(|&&d| d).count()
    }

    /// `||est - truth|| / ||truth||` over determined nodes.
    pub fn relative_l2_error(&self, truth: &ScalarField) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..truth.grid.len() {
            if self.determined[k] {
                let e = self.sigma.values[k] - truth.values[k];
                num += e * e;
                den += truth.values[k] * truth.values[k];
            }
        }
        (num / den).sqrt()
    }
}

/// `sigma = a / |grad u|` with the node-averaged gradient, wherever
/// `|grad u| > eps_g` and `a > delta` outside inclusion nodes.
pub fn recover_sigma(u: &ScalarField, a: &ScalarField, eps_g: f64, delta: f64) -> Result<SigmaEstimate> {
    recover_sigma_windowed(u, a, eps_g, delta, 0)
}

/// Like [`recover_sigma`] but each determined node takes `sum a / sum |grad u|`
/// over the non-inclusion nodes within `radius` nodes in both directions.
/// Level lines of minimizers for noisy `a` bunch into terraces, which the
/// pointwise quotient cannot resolve; the window ratio averages across them.
pub fn recover_sigma_windowed(
    u: &ScalarField,
    a: &ScalarField,
    eps_g: f64,
    delta: f64,
    radius: usize,
) -> Result<SigmaEstimate> {
    if !u.same_support(a) {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid;
    let g = grad(u);
    let plain = |k: usize| matches!(u.mask.kind(k), NodeKind::Interior | NodeKind::Boundary);
    let mags: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (gx, gy) = g.node_average(k);
            gx.hypot(gy)
        })
        .collect();
    let mut sigma = ScalarField::zeros(grid, u.mask.clone());
    let mut determined = vec![false; grid.len()];
    for k in 0..grid.len() {
        if !plain(k) || !(mags[k] > eps_g && a.values[k] > delta) {
            continue;
        }
        let (i, j) = grid.ij(k);
        let (mut sa, mut sg) = (0.0, 0.0);
        for jj in j.saturating_sub(radius)..=(j + radius).min(grid.ny - 1) {
            for ii in i.saturating_sub(radius)..=(i + radius).min(grid.nx - 1) {
                let n = grid.index(ii, jj);
                if plain(n) {
                    sa += a.values[n];
                    sg += mags[n];
                }
            }
        }
        sigma.values[k] = sa / sg;
        determined[k] = true;
    }
    Ok(SigmaEstimate { sigma, determined })
}

/// Max and relative l2 error of `field` against `reference` over active nodes.
pub fn compare(field: &ScalarField, reference: &ScalarField) -> (f64, f64) {
    let mut linf: f64 = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..field.grid.len() {
        if field.mask.is_active(k) {
            let e = field.values[k] - reference.values[k];
            linf = linf.max(e.abs());
            num += e * e;
            den += reference.values[k] * reference.values[k];
        }
    }
    (linf, if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn example1_branches() {
        assert_abs_diff_eq!(example1_minimizer(0.9, 0.0).unwrap(), 0.62, epsilon = 1e-12);
        assert_eq!(example1_minimizer(0.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(example1_minimizer(0.0, 0.9).unwrap(), -0.62, epsilon = 1e-12);
        assert!(matches!(example1_minimizer(0.9, 0.9), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn example1_is_continuous_across_interfaces() {
        let s = FRAC_1_SQRT_2;
        for t in [-s, -0.5, 0.0, 0.3, s] {
            for (x, y) in [(s, t), (-s, t), (t, s), (t, -s)] {
                let v = example1_minimizer(x, y).unwrap();
                assert!(v.abs() <= 1e-12, "({x}, {y}) -> {v}");
                let eps = 1e-9;
                let nudged = example1_minimizer(x * (1.0 - eps), y * (1.0 - eps)).unwrap();
                assert!(nudged.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn example1_matches_boundary_data() {
        for k in 0..64 {
            let t = k as f64 * std::f64::consts::TAU / 64.0;
            let (x, y) = (t.cos(), t.sin());
            assert_abs_diff_eq!(example1_minimizer(x, y).unwrap(), x * x - y * y, epsilon = 1e-12);
        }
    }

    #[test]
    fn phantom_names_round_trip() {
        for name in PHANTOM_NAMES {
            assert_eq!(Phantom::from_name(name).unwrap().name(), name);
        }
        assert!(Phantom::from_name("nope").is_err());
    }

    #[test]
    fn constant_sigma_is_recovered() {
        let grid = Grid::square(33, 0.0, 1.0).unwrap();
        let mask = Arc::new(Mask::square(33, 33).unwrap());
        let sigma = ScalarField::from_fn(grid, mask.clone(), |_, _| 2.0);
        let f = ScalarField::from_fn(grid, mask, |x, _| x);
        let spec = DomainSpec::new(sigma, f).unwrap();
        let sol = solve_conductivity(&spec, 1e-13, 10_000).unwrap();
        let est = recover_sigma(&sol.u, &sol.a, 1e-3, 1e-3).unwrap();
        assert!(est.determined_count() > 1000);
        for k in 0..grid.len() {
            if est.determined[k] {
                assert_abs_diff_eq!(est.sigma.values[k], 2.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn window_of_constant_sigma_is_exact() {
        let grid = Grid::square(33, 0.0, 1.0).unwrap();
        let mask = Arc::new(Mask::square(33, 33).unwrap());
        let sigma = ScalarField::from_fn(grid, mask.clone(), |_, _| 3.0);
        let f = ScalarField::from_fn(grid, mask, |x, y| x + 0.5 * y);
        let sol = solve_conductivity(&DomainSpec::new(sigma, f).unwrap(), 1e-13, 10_000).unwrap();
        let pointwise = recover_sigma(&sol.u, &sol.a, 1e-3, 1e-3).unwrap();
        let windowed = recover_sigma_windowed(&sol.u, &sol.a, 1e-3, 1e-3, 3).unwrap();
        assert_eq!(pointwise.determined, windowed.determined);
        for k in 0..grid.len() {
            if windowed.determined[k] {
                assert_abs_diff_eq!(windowed.sigma.values[k], 3.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn recovery_inverts_current_density_where_sigma_is_locally_constant() {
        let p = Phantom::PiecewiseDisk;
        let data = p.data(65, 1e-12, 100_000).unwrap();
        let grid = data.spec.grid;
        let est = recover_sigma(&data.reference, &data.a, 1e-6, 1e-6).unwrap();
        let sigma = &data.spec.sigma;
        let mut checked = 0;
        for k in 0..grid.len() {
            let flat = grid
                .neighbors8(k)
                .all(|n| !sigma.mask.is_active(n) || sigma.values[n] == sigma.values[k]);
            if est.determined[k] && flat {
                assert_abs_diff_eq!(est.sigma.values[k], sigma.values[k], epsilon = 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }
}
