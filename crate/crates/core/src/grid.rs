//! Masked uniform grids, node fields and staggered edge fields.
//!
//! Nodes are stored row-major: node `(i, j)` sits at index `j * nx + i`
//! with coordinate `(x0 + i*h, y0 + j*h)`. An edge field stores one value
//! per node for each axis: `px[(i, j)]` lives on the edge `(i, j) -> (i+1, j)`
//! and `py[(i, j)]` on `(i, j) -> (i, j+1)`. Slots without an edge (last
//! column for `px`, last row for `py`) and edges touching an exterior node
//! are inactive and always read as zero.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3x3 nodes, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// `n x n` nodes covering `[lo, hi]^2`.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need n >= 3, got {n}")));
        }
        Self::new(n, n, (hi - lo) / (n - 1) as f64, (lo, lo))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + i as f64 * self.h,
            self.origin.1 + j as f64 * self.h,
        )
    }

    /// Node closest to `(x, y)`, clamped to the grid.
    pub fn nearest(&self, x: f64, y: f64) -> (usize, usize) {
        let fi = ((x - self.origin.0) / self.h).round();
        let fj = ((y - self.origin.1) / self.h).round();
        let i = fi.clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fj.clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    /// Area of one node cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// 4-neighbours of node `k` that exist on the grid.
    pub fn neighbors4(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(k);
        let nx = self.nx;
        let ny = self.ny;
        [
            (i > 0).then(|| k - 1),
            (i + 1 < nx).then(|| k + 1),
            (j > 0).then(|| k - nx),
            (j + 1 < ny).then(|| k + nx),
        ]
        .into_iter()
        .flatten()
    }

    /// 8-neighbours of node `k` that exist on the grid.
    pub fn neighbors8(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(k);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let (i, j) = (i as isize, j as isize);
        (-1..=1)
            .flat_map(move |dj| (-1..=1).map(move |di| (di, dj)))
            .filter(|&(di, dj)| di != 0 || dj != 0)
            .filter_map(move |(di, dj)| {
                let (a, b) = (i + di, j + dj);
                (a >= 0 && b >= 0 && a < nx && b < ny).then(|| (b * nx + a) as usize)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NodeKind {
    Exterior = 0,
    Interior = 1,
    Boundary = 2,
    /// Insulating inclusion.
    Insulating = 3,
    /// Perfectly conducting inclusion.
    Conducting = 4,
}

impl NodeKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Exterior,
            1 => Self::Interior,
            2 => Self::Boundary,
            3 => Self::Insulating,
            4 => Self::Conducting,
            _ => return None,
        })
    }

    #[inline]
    pub fn is_active(self) -> bool {
        self != Self::Exterior
    }
}

/// Node labels for a grid, with the perfectly conducting nodes split into
/// 4-connected components.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    nx: usize,
    ny: usize,
    kinds: Vec<NodeKind>,
    /// 0 for nodes outside every conducting inclusion, else a 1-based id.
    component: Vec<u32>,
    n_components: u32,
    x_active: Vec<bool>,
    y_active: Vec<bool>,
}

impl Mask {
    pub fn new(nx: usize, ny: usize, kinds: Vec<NodeKind>) -> Result<Self> {
        if kinds.len() != nx * ny {
            return Err(Error::InvalidMask(format!(
                "expected {} labels, got {}",
                nx * ny,
                kinds.len()
            )));
        }
        let grid = Grid::new(nx, ny, 1.0, (0.0, 0.0))?;

        let mut frontier = VecDeque::new();
        let mut reached = vec![false; kinds.len()];
        for (k, kind) in kinds.iter().enumerate() {
            if *kind == NodeKind::Boundary {
                reached[k] = true;
                frontier.push_back(k);
            }
        }
        if frontier.is_empty() {
            return Err(Error::InvalidMask("no boundary nodes".into()));
        }
        while let Some(k) = frontier.pop_front() {
            for n in grid.neighbors4(k) {
                if !reached[n] && kinds[n].is_active() {
                    reached[n] = true;
                    frontier.push_back(n);
                }
            }
        }
        for (k, kind) in kinds.iter().enumerate() {
            if kind.is_active() && !reached[k] {
                let (i, j) = grid.ij(k);
                return Err(Error::InvalidMask(format!(
                    "node ({i}, {j}) is not connected to the boundary"
                )));
            }
            if matches!(kind, NodeKind::Insulating | NodeKind::Conducting) {
                // Inclusions must be compactly contained: never adjacent to
                // the exterior.
                if grid.neighbors4(k).count() < 4
                    || grid.neighbors4(k).any(|n| kinds[n] == NodeKind::Exterior)
                {
                    let (i, j) = grid.ij(k);
                    return Err(Error::InvalidMask(format!(
                        "inclusion node ({i}, {j}) touches the exterior"
                    )));
                }
            }
            if *kind == NodeKind::Interior
                && (grid.neighbors4(k).count() < 4
                    || grid.neighbors4(k).any(|n| kinds[n] == NodeKind::Exterior))
            {
                let (i, j) = grid.ij(k);
                return Err(Error::InvalidMask(format!(
                    "interior node ({i}, {j}) touches the exterior; it must be labelled boundary"
                )));
            }
        }

        let mut component = vec![0u32; kinds.len()];
        let mut n_components = 0;
        for start in 0..kinds.len() {
            if kinds[start] != NodeKind::Conducting || component[start] != 0 {
                continue;
            }
            n_components += 1;
            component[start] = n_components;
            frontier.push_back(start);
            while let Some(k) = frontier.pop_front() {
                for n in grid.neighbors4(k) {
                    if kinds[n] == NodeKind::Conducting && component[n] == 0 {
                        component[n] = n_components;
                        frontier.push_back(n);
                    }
                }
            }
        }

        let mut x_active = vec![false; kinds.len()];
        let mut y_active = vec![false; kinds.len()];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !kinds[k].is_active() {
                    continue;
                }
                x_active[k] = i + 1 < nx && kinds[k + 1].is_active();
                y_active[k] = j + 1 < ny && kinds[k + nx].is_active();
            }
        }

        Ok(Self {
            nx,
            ny,
            kinds,
            component,
            n_components,
            x_active,
            y_active,
        })
    }

    /// Every node active; the outer ring is the boundary.
    pub fn square(nx: usize, ny: usize) -> Result<Self> {
        Self::from_inside(nx, ny, |_, _| true)
    }

    /// Active nodes are those where `inside(i, j)` holds; active nodes with an
    /// inactive or missing 4-neighbour become boundary nodes.
    pub fn from_inside(nx: usize, ny: usize, inside: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let grid = Grid::new(nx, ny, 1.0, (0.0, 0.0))?;
        let active: Vec<bool> = (0..nx * ny)
            .map(|k| {
                let (i, j) = grid.ij(k);
                inside(i, j)
            })
            .collect();
        let kinds = (0..nx * ny)
            .map(|k| {
                if !active[k] {
                    NodeKind::Exterior
                } else if grid.neighbors4(k).count() < 4 || grid.neighbors4(k).any(|n| !active[n]) {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        Self::new(nx, ny, kinds)
    }

    /// Closed disk of radius `radius` centred at `center`, on `grid`.
    pub fn disk(grid: &Grid, center: (f64, f64), radius: f64) -> Result<Self> {
        let r2 = radius * radius * (1.0 + 1e-12);
        Self::from_inside(grid.nx, grid.ny, |i, j| {
            let (x, y) = grid.coord(i, j);
            let (dx, dy) = (x - center.0, y - center.1);
            dx * dx + dy * dy <= r2
        })
    }

    /// Relabel interior nodes as inclusions. Boundary nodes are never relabelled.
    pub fn with_inclusions(
        &self,
        grid: &Grid,
        insulating: impl Fn(f64, f64) -> bool,
        conducting: impl Fn(f64, f64) -> bool,
    ) -> Result<Self> {
        let mut kinds = self.kinds.clone();
        for (k, kind) in kinds.iter_mut().enumerate() {
            if *kind != NodeKind::Interior {
                continue;
            }
            let (i, j) = grid.ij(k);
            let (x, y) = grid.coord(i, j);
            let ins = insulating(x, y);
            let cond = conducting(x, y);
            if ins && cond {
                return Err(Error::InvalidMask(format!(
                    "node ({i}, {j}) claimed by both inclusion types"
                )));
            }
            if ins {
                *kind = NodeKind::Insulating;
            } else if cond {
                *kind = NodeKind::Conducting;
            }
        }
        Self::new(self.nx, self.ny, kinds)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn kind(&self, k: usize) -> NodeKind {
        self.kinds[k]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    #[inline]
    pub fn is_active(&self, k: usize) -> bool {
        self.kinds[k].is_active()
    }

    #[inline]
    pub fn is_boundary(&self, k: usize) -> bool {
        self.kinds[k] == NodeKind::Boundary
    }

    /// Node is active and not held by Dirichlet data.
    #[inline]
    pub fn is_free(&self, k: usize) -> bool {
        self.kinds[k].is_active() && self.kinds[k] != NodeKind::Boundary
    }

    #[inline]
    pub fn x_edge_active(&self, k: usize) -> bool {
        self.x_active[k]
    }

    #[inline]
    pub fn y_edge_active(&self, k: usize) -> bool {
        self.y_active[k]
    }

    /// Conducting component id (1-based) of node `k`, if any.
    pub fn component(&self, k: usize) -> Option<u32> {
        match self.component[k] {
            0 => None,
            c => Some(c),
        }
    }

    pub fn n_components(&self) -> u32 {
        self.n_components
    }

    pub fn has_inclusions(&self) -> bool {
        self.kinds
            .iter()
            .any(|k| matches!(k, NodeKind::Insulating | NodeKind::Conducting))
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub mask: Arc<Mask>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid, mask: Arc<Mask>) -> Self {
        let n = grid.len();
        Self {
            grid,
            mask,
            values: vec![0.0; n],
        }
    }

    /// Samples `f` at every active node; exterior nodes hold 0.
    pub fn from_fn(grid: Grid, mask: Arc<Mask>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                if mask.is_active(k) {
                    let (i, j) = grid.ij(k);
                    let (x, y) = grid.coord(i, j);
                    f(x, y)
                } else {
                    0.0
                }
            })
            .collect();
        Self { grid, mask, values }
    }

    pub fn from_values(grid: Grid, mask: Arc<Mask>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || mask.dims() != (grid.nx, grid.ny) {
            return Err(Error::GridMismatch);
        }
        for (k, v) in values.iter_mut().enumerate() {
            if !mask.is_active(k) {
                *v = 0.0;
            }
        }
        Ok(Self { grid, mask, values })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Applies `f` at every active node.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| if self.mask.is_active(k) { f(v) } else { 0.0 })
            .collect();
        Self {
            grid: self.grid,
            mask: self.mask.clone(),
            values,
        }
    }

    pub fn same_support(&self, other: &ScalarField) -> bool {
        self.grid == other.grid && (Arc::ptr_eq(&self.mask, &other.mask) || self.mask == other.mask)
    }

    /// Minimum and maximum over boundary nodes.
    pub fn boundary_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &v) in self.values.iter().enumerate() {
            if self.mask.is_boundary(k) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn active_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(k, _)| self.mask.is_active(*k))
            .map(|(_, &v)| v)
    }

    pub fn max_active(&self) -> f64 {
        self.active_values().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_active(&self) -> f64 {
        self.active_values().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub mask: Arc<Mask>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid, mask: Arc<Mask>) -> Self {
        let n = grid.len();
        Self {
            grid,
            mask,
            px: vec![0.0; n],
            py: vec![0.0; n],
        }
    }

    pub fn from_components(grid: Grid, mask: Arc<Mask>, mut px: Vec<f64>, mut py: Vec<f64>) -> Result<Self> {
        if px.len() != grid.len() || py.len() != grid.len() || mask.dims() != (grid.nx, grid.ny) {
            return Err(Error::GridMismatch);
        }
        for k in 0..grid.len() {
            if !mask.x_edge_active(k) {
                px[k] = 0.0;
            }
            if !mask.y_edge_active(k) {
                py[k] = 0.0;
            }
        }
        Ok(Self { grid, mask, px, py })
    }

    /// Euclidean length of the edge pair `(px, py)` owned by node `k`.
    #[inline]
    pub fn magnitude_at(&self, k: usize) -> f64 {
        self.px[k].hypot(self.py[k])
    }

    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.grid.len()).map(|k| self.magnitude_at(k)).collect();
        ScalarField {
            grid: self.grid,
            mask: self.mask.clone(),
            values,
        }
    }

    /// Node-averaged vector: each component is the mean over the active
    /// incident edges of that axis.
    pub fn node_average(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.grid.ij(k);
        let nx = self.grid.nx;
        let avg = |own_active: bool, own: f64, prev: Option<(bool, f64)>| {
            let mut s = 0.0;
            let mut c = 0u32;
            if let Some((true, v)) = prev {
                s += v;
                c += 1;
            }
            if own_active {
                s += own;
                c += 1;
            }
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        };
        let gx = avg(
            self.mask.x_edge_active(k),
            self.px[k],
            (i > 0).then(|| (self.mask.x_edge_active(k - 1), self.px[k - 1])),
        );
        let gy = avg(
            self.mask.y_edge_active(k),
            self.py[k],
            (j > 0).then(|| (self.mask.y_edge_active(k - nx), self.py[k - nx])),
        );
        (gx, gy)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            mask: self.mask.clone(),
            px: self.px.iter().map(|v| c * v).collect(),
            py: self.py.iter().map(|v| c * v).collect(),
        }
    }
}

fn check_support(u: &ScalarField, v: &ScalarField) -> Result<()> {
    if u.same_support(v) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Forward differences on active edges, zero elsewhere.
pub fn grad(u: &ScalarField) -> VectorField {
    let grid = u.grid;
    let mask = &u.mask;
    let nx = grid.nx;
    let inv_h = 1.0 / grid.h;
    let mut px = vec![0.0; grid.len()];
    let mut py = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if mask.x_edge_active(k) {
            px[k] = (u.values[k + 1] - u.values[k]) * inv_h;
        }
        if mask.y_edge_active(k) {
            py[k] = (u.values[k + nx] - u.values[k]) * inv_h;
        }
    }
    VectorField {
        grid,
        mask: mask.clone(),
        px,
        py,
    }
}

/// Negative adjoint of [`grad`] for the `h^2`-weighted inner products.
pub fn div(p: &VectorField) -> ScalarField {
    let grid = p.grid;
    let mask = &p.mask;
    let nx = grid.nx;
    let inv_h = 1.0 / grid.h;
    let mut out = vec![0.0; grid.len()];
    for (k, o) in out.iter_mut().enumerate() {
        if !mask.is_active(k) {
            continue;
        }
        let (i, j) = grid.ij(k);
        let mut d = 0.0;
        if mask.x_edge_active(k) {
            d += p.px[k];
        }
        if i > 0 && mask.x_edge_active(k - 1) {
            d -= p.px[k - 1];
        }
        if mask.y_edge_active(k) {
            d += p.py[k];
        }
        if j > 0 && mask.y_edge_active(k - nx) {
            d -= p.py[k - nx];
        }
        *o = d * inv_h;
    }
    ScalarField {
        grid,
        mask: mask.clone(),
        values: out,
    }
}

/// `h^2 * sum u v` over active nodes.
pub fn dot_nodes(u: &ScalarField, v: &ScalarField) -> f64 {
    let mut s = 0.0;
    for k in 0..u.grid.len() {
        if u.mask.is_active(k) {
            s += u.values[k] * v.values[k];
        }
    }
    s * u.grid.cell_area()
}

/// `h^2 * sum (px qx + py qy)` over active edges.
pub fn dot_edges(p: &VectorField, q: &VectorField) -> f64 {
    let mut s = 0.0;
    for k in 0..p.grid.len() {
        if p.mask.x_edge_active(k) {
            s += p.px[k] * q.px[k];
        }
        if p.mask.y_edge_active(k) {
            s += p.py[k] * q.py[k];
        }
    }
    s * p.grid.cell_area()
}

/// Fails on the first negative active weight.
pub fn check_weight(a: &ScalarField) -> Result<()> {
    for (k, &v) in a.values.iter().enumerate() {
        if a.mask.is_active(k) && !(v >= 0.0) {
            let (i, j) = a.grid.ij(k);
            return Err(Error::NegativeWeight { i, j, value: v });
        }
    }
    Ok(())
}

/// Discrete `integral of a |grad u|`: `h^2 * sum a(k) |(px, py)(k)|` with the
/// forward edge pair owned by each node.
pub fn weighted_tv(u: &ScalarField, a: &ScalarField) -> Result<f64> {
    check_support(u, a)?;
    check_weight(a)?;
    Ok(weighted_tv_of_gradient(&grad(u), a))
}

pub(crate) fn weighted_tv_of_gradient(g: &VectorField, a: &ScalarField) -> f64 {
    let mut s = 0.0;
    for k in 0..g.grid.len() {
        if g.mask.is_active(k) && a.values[k] != 0.0 {
            s += a.values[k] * g.magnitude_at(k);
        }
    }
    s * g.grid.cell_area()
}

/// Truncates `u` to the range of `f` over the boundary nodes.
pub fn clamp(u: &ScalarField, f: &ScalarField) -> ScalarField {
    let (lo, hi) = f.boundary_range();
    u.map(|v| v.max(lo).min(hi))
}

/// Number of active nodes outside the boundary range of `f`.
pub fn range_violations(u: &ScalarField, f: &ScalarField) -> usize {
    let (lo, hi) = f.boundary_range();
    u.active_values().filter(|&v| v < lo || v > hi).count()
}
