use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlg_core::forward::{assemble_dense, boundary_flux, inclusion_report, solve_conductivity, solve_with_inclusions, DomainSpec};
use wlg_core::oracle::Phantom;
use wlg_core::{Grid, Mask, ScalarField};

#[test]
fn random_nine_by_nine_systems_match_dense_lu() {
    let grid = Grid::square(9, 0.0, 1.0).unwrap();
    let mask = Arc::new(Mask::square(9, 9).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let sigma = ScalarField::from_fn(grid, mask.clone(), |_, _| rng.gen_range(0.1..10.0));
        let f = ScalarField::from_fn(grid, mask.clone(), |_, _| rng.gen_range(-1.0..1.0));
        let spec = DomainSpec::new(sigma.clone(), f).unwrap();
        let sol = solve_conductivity(&spec, 1e-15, 10_000).unwrap();
        let (free, mat, rhs) = assemble_dense(&spec, &sigma).unwrap();
        let n = free.len();
        let x = DMatrix::from_row_slice(n, n, &mat).lu().solve(&DVector::from_vec(rhs)).unwrap();
        for (r, &k) in free.iter().enumerate() {
            assert!((sol.u.values[k] - x[r]).abs() <= 1e-10, "node {k}: {} vs {}", sol.u.values[k], x[r]);
        }
    }
}

#[test]
fn boundary_flux_vanishes() {
    let spec = Phantom::SmoothBump.domain_spec(129).unwrap();
    let sol = solve_conductivity(&spec, 1e-12, 100_000).unwrap();
    let (net, abs) = boundary_flux(&sol.u, &sol.sigma);
    assert!(net.abs() <= 1e-8 * abs, "net {net:e}, scale {abs:e}");
}

#[test]
fn conducting_square_is_equipotential_and_carries_no_net_current() {
    let spec = Phantom::Example1Conducting.domain_spec(129).unwrap();
    let sol = solve_with_inclusions(&spec, 1e-12, 200_000, 1e-3).unwrap();
    let report = sol.inclusions.as_ref().unwrap();
    assert_eq!(report.conducting.len(), 1);
    let c = &report.conducting[0];
    assert!(c.spread <= 1e-3, "spread {:e}", c.spread);
    assert!(c.flux.abs() <= 1e-6 * report.boundary_flux_scale, "flux {:e}", c.flux);
    // x^2 - y^2 is odd under the swap of x and y, so the square sits at zero.
    assert!(c.mean.abs() <= 1e-6);
}

#[test]
fn insulating_disk_absorbs_no_current() {
    let spec = Phantom::InsulatingDisk.domain_spec(129).unwrap();
    let sol = solve_with_inclusions(&spec, 1e-12, 200_000, 1e-3).unwrap();
    let report = inclusion_report(&sol.u, &sol.sigma);
    assert!(report.insulating_flux.abs() <= 1e-6 * report.boundary_flux_scale);
    let max_a = sol.a.max_active();
    for k in 0..spec.grid.len() {
        if spec.mask.kind(k) == wlg_core::NodeKind::Insulating
            && spec.grid.neighbors8(k).all(|n| spec.mask.kind(n) == wlg_core::NodeKind::Insulating)
        {
            assert!(sol.a.values[k] <= 1e-4 * max_a);
        }
    }
}

#[test]
fn inclusion_path_is_identical_without_inclusions() {
    let spec = Phantom::PiecewiseDisk.domain_spec(33).unwrap();
    let a = solve_conductivity(&spec, 1e-12, 10_000).unwrap();
    let b = solve_with_inclusions(&spec, 1e-12, 10_000, 1e-3).unwrap();
    assert!(a.u.values.iter().zip(&b.u.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(b.inclusions.is_none());
}

#[test]
fn tight_spread_tolerance_is_reported() {
    let spec = Phantom::Example1Conducting
        .domain_spec(33)
        .unwrap()
        .with_surrogates(1e4, 1e-4)
        .unwrap();
    let err = solve_with_inclusions(&spec, 1e-12, 100_000, 1e-14).unwrap_err();
    assert!(matches!(err, wlg_core::Error::InclusionSpreadExceeded { .. }), "{err}");
}
