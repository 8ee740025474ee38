//! Level-set structure of reconstructed potentials.
//!
//! Components of super-level sets are 4-connected and their complements
//! 8-connected. Insulating nodes never belong to a component.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{grad, Grid, NodeKind, ScalarField};

/// Connected components of `member`, each sorted, in order of smallest node.
pub fn components(grid: &Grid, member: &[bool], eight: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; member.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..member.len() {
        if !member[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(k) = queue.pop_front() {
            comp.push(k);
            let mut visit = |n: usize| {
                if member[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if eight {
                grid.neighbors8(k).for_each(&mut visit);
            } else {
                grid.neighbors4(k).for_each(&mut visit);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn eligible(u: &ScalarField, k: usize) -> bool {
    u.mask.is_active(k) && u.mask.kind(k) != NodeKind::Insulating
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut s = Stats { min: f64::INFINITY, max: f64::NEG_INFINITY, mean: 0.0, count: 0 };
        for v in values {
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            s.mean += v;
            s.count += 1;
        }
        if s.count == 0 {
            return None;
        }
        s.mean /= s.count as f64;
        Some(s)
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetComponent {
    pub lambda: f64,
    pub nodes: Vec<usize>,
    pub touches_boundary: bool,
    /// `u` at the component's boundary nodes.
    pub contact: Option<Stats>,
    /// Nodes of the component adjacent to `{u < lambda}`.
    pub edge: Vec<usize>,
}

impl LevelSetComponent {
    /// Spread of `v` over the level-line nodes, skipping those flagged in `exclude`.
    pub fn edge_spread(&self, v: &ScalarField, exclude: Option<&[bool]>) -> Option<f64> {
        let keep = |k: &usize| exclude.map_or(true, |z| !z[*k]);
        Stats::of(self.edge.iter().filter(|k| keep(k)).map(|&k| v.values[k])).map(|s| s.spread())
    }
}

/// 4-connected components of `{u >= lambda}` without insulating nodes.
pub fn super_level_components(u: &ScalarField, lambda: f64) -> Vec<LevelSetComponent> {
    let grid = &u.grid;
    let member: Vec<bool> = (0..grid.len()).map(|k| eligible(u, k) && u.values[k] >= lambda).collect();
    components(grid, &member, false)
        .into_iter()
        .map(|nodes| {
            let contact = Stats::of(nodes.iter().filter(|&&k| u.mask.is_boundary(k)).map(|&k| u.values[k]));
            let edge = nodes
                .iter()
                .copied()
                .filter(|&k| grid.neighbors4(k).any(|n| eligible(u, n) && !member[n]))
                .collect();
            LevelSetComponent { lambda, touches_boundary: contact.is_some(), contact, nodes, edge }
        })
        .collect()
}

/// 8-connected components of `{u < lambda}` without insulating nodes.
pub fn sub_level_components(u: &ScalarField, lambda: f64) -> Vec<Vec<usize>> {
    let member: Vec<bool> = (0..u.grid.len()).map(|k| eligible(u, k) && u.values[k] < lambda).collect();
    components(&u.grid, &member, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub lambda: f64,
    pub component: usize,
    pub nodes: usize,
    pub touches_boundary: bool,
    pub contact: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Audit {
    pub rows: Vec<AuditRow>,
}

impl Audit {
    /// Rows whose component does not reach the domain boundary.
    pub fn failures(&self) -> impl Iterator<Item = &AuditRow> {
        self.rows.iter().filter(|r| !r.touches_boundary)
    }

    pub fn failure_count(&self) -> usize {
        self.failures().count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,component,nodes,touches_boundary,contact_min,contact_max\n");
        for r in &self.rows {
            let (lo, hi) = r.contact.map_or((String::new(), String::new()), |c| (format!("{:e}", c.min), format!("{:e}", c.max)));
            let _ = writeln!(s, "{:e},{},{},{},{},{}", r.lambda, r.component, r.nodes, r.touches_boundary, lo, hi);
        }
        s
    }
}

pub fn boundary_intersection_audit(u: &ScalarField, levels: &[f64]) -> Audit {
    let mut rows = Vec::new();
    for &lambda in levels {
        for (i, c) in super_level_components(u, lambda).into_iter().enumerate() {
            rows.push(AuditRow {
                lambda,
                component: i,
                nodes: c.nodes.len(),
                touches_boundary: c.touches_boundary,
                contact: c.contact,
            });
        }
    }
    Audit { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelValueRow {
    pub lambda: f64,
    pub component: usize,
    pub edge_nodes: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelValueStats {
    pub rows: Vec<LevelValueRow>,
}

impl LevelValueStats {
    pub fn max_spread(&self) -> f64 {
        self.rows.iter().map(|r| r.spread).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,component,edge_nodes,spread\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:e},{},{},{:e}", r.lambda, r.component, r.edge_nodes, r.spread);
        }
        s
    }
}

/// Spread of `u_ref` along each level line of `u_test`, outside `exclude`.
pub fn level_boundary_value_check(
    u_ref: &ScalarField,
    u_test: &ScalarField,
    levels: &[f64],
    exclude: Option<&[bool]>,
) -> Result<LevelValueStats> {
    if !u_ref.same_support(u_test) {
        return Err(Error::GridMismatch);
    }
    let mut rows = Vec::new();
    for &lambda in levels {
        for (i, c) in super_level_components(u_test, lambda).into_iter().enumerate() {
            let kept = c.edge.iter().filter(|&&k| exclude.map_or(true, |z| !z[k])).count();
            if let Some(spread) = c.edge_spread(u_ref, exclude) {
                rows.push(LevelValueRow { lambda, component: i, edge_nodes: kept, spread });
            }
        }
    }
    Ok(LevelValueStats { rows })
}

/// Largest forward-difference gradient magnitude over active nodes.
pub fn lipschitz_estimate(u: &ScalarField) -> f64 {
    grad(u).magnitude().max_active().max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub zero_set_nodes: usize,
    pub zero_set_components: Vec<Vec<usize>>,
    pub o_inf_nodes: usize,
    pub o_inf_components: Vec<Vec<usize>>,
    /// Histogram mode of `u` on each detected flat component.
    pub plateau_values: Vec<f64>,
    /// Length of the union of `u`-ranges over the flat components.
    pub plateau_measure: f64,
    pub continuity_defect_of_a: f64,
}

impl AdmissibilityReport {
    /// Flags the Z set: nodes with `|u - c| <= band` for some plateau value `c`.
    pub fn z_set(&self, u: &ScalarField, band: f64) -> Vec<bool> {
        (0..u.grid.len())
            .map(|k| u.mask.is_active(k) && self.plateau_values.iter().any(|c| (u.values[k] - c).abs() <= band))
            .collect()
    }
}

fn histogram_mode(values: &[f64], bins: usize) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let best = (0..bins).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap_or(0);
    lo + (best as f64 + 0.5) * width
}

pub fn admissibility_diagnostics(
    u: &ScalarField,
    a: &ScalarField,
    delta0: f64,
    eps_g: f64,
) -> Result<AdmissibilityReport> {
    if !u.same_support(a) {
        return Err(Error::GridMismatch);
    }
    if !(delta0 > 0.0) || !(eps_g > 0.0) {
        return Err(Error::InvalidDomain(format!("thresholds must be positive, got delta0={delta0}, eps_g={eps_g}")));
    }
    let grid = &u.grid;
    let n = grid.len();
    let g = grad(u);
    let zero: Vec<bool> = (0..n).map(|k| u.mask.is_active(k) && a.values[k] <= delta0).collect();
    let flat: Vec<bool> = (0..n)
        .map(|k| {
            eligible(u, k) && {
                let (gx, gy) = g.node_average(k);
                gx.hypot(gy) <= eps_g
            }
        })
        .collect();
    let zero_set_components = components(grid, &zero, false);
    let o_inf_components = components(grid, &flat, false);

    let mut plateau_values = Vec::with_capacity(o_inf_components.len());
    let mut ranges = Vec::with_capacity(o_inf_components.len());
    for comp in &o_inf_components {
        let vals: Vec<f64> = comp.iter().map(|&k| u.values[k]).collect();
        plateau_values.push(histogram_mode(&vals, 64));
        let s = Stats::of(vals.iter().copied()).expect("components are nonempty");
        ranges.push((s.min, s.max));
    }
    ranges.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut plateau_measure = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (lo, hi) in ranges {
        current = match current {
            Some((cl, ch)) if lo <= ch => Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                plateau_measure += ch - cl;
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    if let Some((cl, ch)) = current {
        plateau_measure += ch - cl;
    }

    let excluded = |k: usize| !eligible(u, k) || flat[k] || u.mask.kind(k) == NodeKind::Conducting;
    let mut continuity_defect_of_a: f64 = 0.0;
    for k in 0..n {
        if excluded(k) {
            continue;
        }
        for nb in grid.neighbors4(k).filter(|&nb| nb > k && !excluded(nb)) {
            continuity_defect_of_a = continuity_defect_of_a.max((a.values[k] - a.values[nb]).abs());
        }
    }

    Ok(AdmissibilityReport {
        zero_set_nodes: zero.iter().filter(|&&z| z).count(),
        zero_set_components,
        o_inf_nodes: flat.iter().filter(|&&z| z).count(),
        o_inf_components,
        plateau_values,
        plateau_measure,
        continuity_defect_of_a,
    })
}

/// `count` levels equispaced in the open interval `(lo, hi)` that stay more
/// than `band` away from every plateau value. Candidates are refined until
/// enough survive; fewer are returned only if the admissible set is tiny.
pub fn sample_levels(lo: f64, hi: f64, plateau_values: &[f64], band: f64, count: usize) -> Vec<f64> {
    if !(hi > lo) || count == 0 {
        return Vec::new();
    }
    let mut m = count;
    loop {
        let levels: Vec<f64> = (1..=m)
            .map(|i| lo + (hi - lo) * i as f64 / (m + 1) as f64)
            .filter(|l| plateau_values.iter().all(|c| (l - c).abs() > band))
            .collect();
        if levels.len() >= count {
            return thin(levels, count);
        }
        if m > 64 * count {
            return levels;
        }
        m *= 2;
    }
}

fn thin(levels: Vec<f64>, count: usize) -> Vec<f64> {
    if levels.len() == count {
        return levels;
    }
    (0..count).map(|i| levels[i * (levels.len() - 1) / (count - 1).max(1)]).collect()
}
