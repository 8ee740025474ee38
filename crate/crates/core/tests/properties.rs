use std::sync::Arc;

use proptest::prelude::*;
use wlg_core::certificate::gauss_green_check;
use wlg_core::forward::add_noise;
use wlg_core::grid::{clamp, div, dot_edges, dot_nodes, grad, weighted_tv};
use wlg_core::io::FieldFile;
use wlg_core::minimizer::{dual_bound, project_dual_ball};
use wlg_core::structure::super_level_components;
use wlg_core::{Grid, Mask, ScalarField, VectorField};

fn layout(n: usize, disk: bool) -> (Grid, Arc<Mask>) {
    let grid = Grid::square(n, -1.0, 1.0).unwrap();
    let mask = if disk { Mask::disk(&grid, (0.0, 0.0), 1.0).unwrap() } else { Mask::square(n, n).unwrap() };
    (grid, Arc::new(mask))
}

prop_compose! {
    fn fields(n: usize)(disk in any::<bool>(), vals in prop::collection::vec(-2.0f64..2.0, 5 * n * n)) -> (ScalarField, ScalarField, VectorField) {
        let (grid, mask) = layout(n, disk);
        let m = grid.len();
        let u = ScalarField::from_values(grid, mask.clone(), vals[..m].to_vec()).unwrap();
        let a = ScalarField::from_values(grid, mask.clone(), vals[m..2 * m].iter().map(|v| v.abs()).collect()).unwrap();
        let b = VectorField::from_components(grid, mask, vals[2 * m..3 * m].to_vec(), vals[3 * m..4 * m].to_vec()).unwrap();
        (u, a, b)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_negative_adjoint((u, _a, b) in fields(11)) {
        let mut u0 = u.clone();
        for k in 0..u0.grid.len() {
            if u0.mask.is_boundary(k) {
                u0.values[k] = 0.0;
            }
        }
        let lhs = dot_edges(&grad(&u0), &b);
        let rhs = -dot_nodes(&u0, &div(&b));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gauss_green_defect_is_tiny((u, a, b) in fields(11)) {
        prop_assert!(gauss_green_check(&u, &b, &a) <= 1e-12);
    }

    #[test]
    fn tv_is_homogeneous_and_shift_invariant((u, a, _b) in fields(9), c in -3.0f64..3.0, s in 0.0f64..4.0) {
        let tv = weighted_tv(&u, &a).unwrap();
        let scaled = weighted_tv(&u.map(|v| c * v), &a).unwrap();
        let shifted = weighted_tv(&u.map(|v| v + c), &a).unwrap();
        let weighted = weighted_tv(&u, &a.map(|w| s * w)).unwrap();
        prop_assert!((scaled - c.abs() * tv).abs() <= 1e-12 * (1.0 + tv));
        prop_assert!((shifted - tv).abs() <= 1e-12 * (1.0 + tv));
        prop_assert!((weighted - s * tv).abs() <= 1e-12 * (1.0 + tv));
        prop_assert!(tv >= 0.0);
    }

    #[test]
    fn clamping_never_increases_tv((u, a, _b) in fields(9)) {
        let f = u.map(|v| 0.5 * v.sin());
        let c = clamp(&u, &f);
        prop_assert!(weighted_tv(&c, &a).unwrap() <= weighted_tv(&u, &a).unwrap() + 1e-12);
        let (lo, hi) = f.boundary_range();
        prop_assert!(c.active_values().all(|v| v >= lo && v <= hi));
        prop_assert_eq!(clamp(&c, &f), c);
    }

    #[test]
    fn projection_is_feasible_and_idempotent((_u, a, b) in fields(9)) {
        let p = project_dual_ball(&b, &a).unwrap();
        for k in 0..p.grid.len() {
            prop_assert!(p.magnitude_at(k) <= a.values[k] * (1.0 + 1e-14));
        }
        let q = project_dual_ball(&p, &a).unwrap();
        for k in 0..p.grid.len() {
            prop_assert!((q.px[k] - p.px[k]).abs() <= 1e-15 && (q.py[k] - p.py[k]).abs() <= 1e-15);
        }
    }

    #[test]
    fn weak_duality((u, a, b) in fields(9)) {
        let f = u.map(|v| v.cos());
        let mut ext = u.clone();
        for k in 0..ext.grid.len() {
            if ext.mask.is_boundary(k) {
                ext.values[k] = f.values[k];
            }
        }
        let feasible = project_dual_ball(&b, &a).unwrap();
        prop_assert!(dual_bound(&feasible, &f) <= weighted_tv(&ext, &a).unwrap() + 1e-12);
    }

    #[test]
    fn super_level_sets_nest((u, _a, _b) in fields(13), l1 in -2.0f64..2.0, dl in 0.0f64..2.0) {
        let outer = super_level_components(&u, l1);
        let inner = super_level_components(&u, l1 + dl);
        for c in &inner {
            let hosts = outer.iter().filter(|o| c.nodes.iter().all(|k| o.nodes.binary_search(k).is_ok())).count();
            prop_assert_eq!(hosts, 1);
        }
    }

    #[test]
    fn weak_complements_cover_up_to_level_line((u, _a, _b) in fields(13), lambda in -2.0f64..2.0) {
        let n = u.grid.len();
        let mut count = vec![0u8; n];
        for c in super_level_components(&u, lambda) {
            c.nodes.iter().for_each(|&k| count[k] += 1);
        }
        let neg = u.map(|v| -v);
        for c in super_level_components(&neg, -lambda) {
            c.nodes.iter().for_each(|&k| count[k] += 1);
        }
        for k in 0..n {
            let expected = if !u.mask.is_active(k) { 0 } else if u.values[k] == lambda { 2 } else { 1 };
            prop_assert_eq!(count[k], expected);
        }
    }

    #[test]
    fn field_files_round_trip(nx in 3usize..12, ny in 3usize..12, bits in prop::collection::vec(any::<u64>(), 288), h in 1e-6f64..10.0) {
        let grid = Grid::new(nx, ny, h, (-h, 0.5)).unwrap();
        let mask = Arc::new(Mask::square(nx, ny).unwrap());
        let vals: Vec<f64> = bits[..nx * ny].iter().map(|&b| f64::from_bits(b)).collect();
        let u = ScalarField::from_values(grid, mask.clone(), vals.clone()).unwrap();
        let back = FieldFile::from_bytes(&FieldFile::scalar(&u).to_bytes()).unwrap();
        prop_assert_eq!(back.grid, grid);
        let v = back.into_scalar(mask.clone()).unwrap();
        prop_assert!(vals.iter().zip(&v.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let p = grad(&u.map(|x| if x.is_finite() { x.clamp(-1e100, 1e100) } else { 0.0 }));
        let bytes = FieldFile::vector(&p).to_bytes();
        prop_assert_eq!(FieldFile::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn noise_is_reproducible((_u, a, _b) in fields(9), level in 0.0f64..0.2, seed in any::<u64>()) {
        let x = add_noise(&a, level, seed);
        let y = add_noise(&a, level, seed);
        prop_assert!(x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(x.values.iter().all(|&v| v >= 0.0));
    }
}
