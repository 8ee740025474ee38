//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlg_core::certificate::{certify, gauss_green_check, gradient_threshold, TolSpec};
use wlg_core::forward::{
    add_noise, assemble_dense, boundary_flux, solve_conductivity, solve_with_inclusions, DomainSpec,
};
use wlg_core::grid::{div, dot_edges, dot_nodes, grad};
use wlg_core::io::{read_scalar, FieldFile, RunConfig};
use wlg_core::minimizer::Init;
use wlg_core::oracle::{recover_sigma, recover_sigma_windowed, Phantom, PhantomData};
use wlg_core::pipeline::{self, UniquenessReport};
use wlg_core::structure::{
    admissibility_diagnostics, boundary_intersection_audit, level_boundary_value_check, lipschitz_estimate,
    sample_levels,
};
use wlg_core::{Grid, Mask, ScalarField, VectorField};

const BIN: &str = env!("CARGO_BIN_EXE_wlg");

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(&str, bool)], detail: String) -> Self {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let detail = if failed.is_empty() { detail } else { format!("{detail}; failed: {}", failed.join(", ")) };
        Self { pass: failed.is_empty(), detail }
    }
}

fn wlg(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("run wlg");
    if !out.status.success() {
        eprint!("{}", String::from_utf8_lossy(&out.stderr));
    }
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN)
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn subdir(dir: &Path, name: &str) -> PathBuf {
    let d = dir.join(name);
    fs::create_dir_all(&d).expect("create directory");
    d
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("valid config")
}

/// Shared runs for the example1 phantom (a = 1) and the smooth bump, from five starts.
struct Shared {
    p1: PhantomData,
    p1_uniq: UniquenessReport,
    p1_time: Duration,
    p2: PhantomData,
    p2_uniq: UniquenessReport,
    p2_time: Duration,
}

fn shared() -> Shared {
    let p1_cfg = config("phantom=example1\nn=129\n");
    let p1 = Phantom::Example1.data(129, 1e-12, 200_000).unwrap();
    let t = Instant::now();
    let p1_uniq = pipeline::uniqueness(&p1_cfg, &p1.a, &p1.f).unwrap();
    let p1_time = t.elapsed();

    let p2_cfg = config("phantom=bump\nn=129\n");
    let p2 = Phantom::SmoothBump.data(129, 1e-12, 200_000).unwrap();
    let t = Instant::now();
    let p2_uniq = pipeline::uniqueness(&p2_cfg, &p2.a, &p2.f).unwrap();
    let p2_time = t.elapsed();
    Shared { p1, p1_uniq, p1_time, p2, p2_uniq, p2_time }
}

fn harmonic_run(u: &UniquenessReport) -> &pipeline::Run {
    let i = u.labels.iter().position(|l| l == "harmonic").expect("harmonic init configured");
    &u.runs[i]
}

fn criterion1(dir: &Path) -> Outcome {
    fs::write(dir.join("e1.cfg"), "phantom=example1\nn=129\n").unwrap();
    let cfg = path(dir, "e1.cfg");
    let syn = dir.join("syn");
    let rec = dir.join("rec");
    let (c1, _) = wlg(&["synth", "--config", &cfg, "--out", &path(dir, "syn")]);
    let t = Instant::now();
    let (c2, _) = wlg(&[
        "reconstruct", "--config", &cfg,
        "--mask", &path(&syn, "mask.wlgf"), "--a", &path(&syn, "a.wlgf"), "--f", &path(&syn, "f.wlgf"),
        "--out", &path(dir, "rec"),
    ]);
    let elapsed = t.elapsed();
    let (c3, cmp) = wlg(&[
        "oracle", "--phantom", "example1", "--n", "129", "--compare", &path(&rec, "u_rec.wlgf"),
        "--out", &path(dir, "oracle"),
    ]);
    let report = fs::read_to_string(rec.join("reconstruct_report.txt")).unwrap_or_default();
    let linf = value(&cmp, "linf");
    let l2 = value(&cmp, "rel_l2");
    let gap = value(&report, "gap_relative");
    Outcome::new(
        &[
            ("commands exit 0", c1 == 0 && c2 == 0 && c3 == 0),
            ("linf <= 5e-2", linf <= 5e-2),
            ("rel_l2 <= 1e-2", l2 <= 1e-2),
            ("gap <= 1e-3", gap <= 1e-3),
            ("runtime <= 60 s", elapsed <= Duration::from_secs(60)),
        ],
        format!("linf={linf:.3e} rel_l2={l2:.3e} gap_rel={gap:.3e} reconstruct={:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion2(s: &Shared) -> Outcome {
    let mut checks = Vec::new();
    let mut detail = Vec::new();
    for (name, data, uniq) in [("example1", &s.p1, &s.p1_uniq), ("bump", &s.p2, &s.p2_uniq)] {
        let run = harmonic_run(uniq);
        let cert = certify(&run.rec.u, &run.rec.b, &data.a, &run.f_used, &TolSpec::default()).unwrap();
        let rel = (cert.primal - cert.dual).abs() / cert.primal;
        checks.push((rel <= 1e-3, format!("{name} gap")));
        detail.push(format!("{name} |P-D|/P={rel:.2e}"));
    }
    // Forward currents as dual fields at h = 1/128.
    for (name, phantom) in [("example1", Phantom::Example1Conducting), ("bump", Phantom::SmoothBump)] {
        let spec = phantom.domain_spec(257).unwrap();
        let sol = solve_with_inclusions(&spec, 1e-12, 400_000, 1e-3).unwrap();
        let b = sol.current.scale(-1.0);
        let cert = certify(&sol.u, &b, &sol.a, &spec.f, &TolSpec::default()).unwrap();
        let ratio = cert.divergence_residual / cert.b_norm;
        checks.push((ratio <= 0.05, format!("{name} J divergence")));
        detail.push(format!("{name} div(J)/|J|={ratio:.2e}"));
    }
    let names: Vec<(&str, bool)> = checks.iter().map(|(ok, n)| (n.as_str(), *ok)).collect();
    Outcome::new(&names, detail.join(" "))
}

fn criterion3() -> Outcome {
    let grid = Grid::square(33, 0.0, 1.0).unwrap();
    let mask = Arc::new(Mask::square(33, 33).unwrap());
    let spec = DomainSpec::new(
        ScalarField::from_fn(grid, mask.clone(), |_, _| 1.0),
        ScalarField::from_fn(grid, mask.clone(), |x, y| 0.3 + 2.0 * x - 0.7 * y),
    )
    .unwrap();
    let sol = solve_conductivity(&spec, 1e-14, 10_000).unwrap();
    let linear = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            let (x, y) = grid.coord(i, j);
            (sol.u.values[k] - (0.3 + 2.0 * x - 0.7 * y)).abs()
        })
        .fold(0.0, f64::max);

    let g9 = Grid::square(9, 0.0, 1.0).unwrap();
    let m9 = Arc::new(Mask::square(9, 9).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut dense: f64 = 0.0;
    for _ in 0..20 {
        let sigma = ScalarField::from_fn(g9, m9.clone(), |_, _| rng.gen_range(0.1..10.0));
        let f = ScalarField::from_fn(g9, m9.clone(), |_, _| rng.gen_range(-1.0..1.0));
        let spec = DomainSpec::new(sigma.clone(), f).unwrap();
        let sol = solve_conductivity(&spec, 1e-14, 10_000).unwrap();
        let (free, mat, rhs) = assemble_dense(&spec, &sigma).unwrap();
        let n = free.len();
        let x = nalgebra::DMatrix::from_row_slice(n, n, &mat).lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for (r, &k) in free.iter().enumerate() {
            dense = dense.max((sol.u.values[k] - x[r]).abs());
        }
    }

    let bump = Phantom::SmoothBump.domain_spec(129).unwrap();
    let sol = solve_conductivity(&bump, 1e-12, 200_000).unwrap();
    let (net, abs) = boundary_flux(&sol.u, &sol.sigma);
    let flux = net.abs() / abs;

    let oinf = Phantom::Example1Conducting.domain_spec(129).unwrap();
    let sol = solve_with_inclusions(&oinf, 1e-12, 200_000, 1e-3).unwrap();
    let inc = sol.inclusions.unwrap();
    let comp_flux = inc.conducting.iter().map(|c| c.flux.abs() / inc.boundary_flux_scale).fold(0.0, f64::max);
    let spread = inc.conducting.iter().map(|c| c.spread).fold(0.0, f64::max);
    Outcome::new(
        &[
            ("linear exact", linear <= 1e-12),
            ("dense match", dense <= 1e-10),
            ("boundary flux", flux <= 1e-8),
            ("component flux", comp_flux <= 1e-6),
            ("equipotential", spread <= 1e-3),
        ],
        format!(
            "linear={linear:.1e} dense={dense:.1e} flux={flux:.1e} oinf_flux={comp_flux:.1e} spread={spread:.1e}"
        ),
    )
}

fn criterion4(s: &Shared) -> Outcome {
    let total = s.p1_time + s.p2_time;
    let mut checks = vec![("runtime <= 5 min".to_string(), total <= Duration::from_secs(300))];
    let mut detail = Vec::new();
    for (name, u) in [("example1", &s.p1_uniq), ("bump", &s.p2_uniq)] {
        // Tolerance is 1e-2 * area * range(f) with the default uniqTol.
        checks.push((format!("{name} distances"), u.passes() && u.runs.len() == 5));
        detail.push(format!("{name} max_l1={:.2e} tol={:.2e}", u.max_distance(), u.tolerance));
    }
    detail.push(format!("time={:.1}s", total.as_secs_f64()));
    let named: Vec<(&str, bool)> = checks.iter().map(|(n, ok)| (n.as_str(), *ok)).collect();
    Outcome::new(&named, detail.join(" "))
}

fn criterion5(s: &Shared, extra: &[(&ScalarField, &ScalarField, usize, usize)]) -> Outcome {
    let mut worst_fraction: f64 = 0.0;
    let mut bound_ok = true;
    let mut count = 0;
    let runs = s.p1_uniq.runs.iter().chain(&s.p2_uniq.runs).map(|r| {
        (&r.rec.u, &r.f_used, r.rec.report.pre_clamp_violations, r.rec.report.active_nodes)
    });
    for (u, f, violations, active) in runs.chain(extra.iter().copied()) {
        let (lo, hi) = f.boundary_range();
        bound_ok &= u.active_values().all(|v| v >= lo && v <= hi);
        worst_fraction = worst_fraction.max(violations as f64 / active as f64);
        count += 1;
    }
    Outcome::new(
        &[("range", bound_ok), ("violations <= 1%", worst_fraction <= 1e-2)],
        format!("reconstructions={count} worst_pre_clamp_fraction={worst_fraction:.2e}"),
    )
}

fn criterion6(s: &Shared) -> Outcome {
    let mut checks = Vec::new();
    let mut detail = Vec::new();
    for (name, data, uniq) in [("example1", &s.p1, &s.p1_uniq), ("bump", &s.p2, &s.p2_uniq)] {
        let base = harmonic_run(uniq);
        let other = &uniq.runs[uniq.labels.iter().position(|l| l == "zero").unwrap()];
        let u = &base.rec.u;
        let delta = 1e-3 * data.a.max_active();
        let eps_g = gradient_threshold(u, &data.a, delta);
        let adm = admissibility_diagnostics(u, &data.a, delta, eps_g).unwrap();
        let h = u.grid.h;
        let band = 4.0 * h * lipschitz_estimate(u);
        let (lo, hi) = base.f_used.boundary_range();
        let levels = sample_levels(lo, hi, &adm.plateau_values, band, 20);
        let audit = boundary_intersection_audit(u, &levels);
        let z = adm.z_set(u, band);
        let spread = level_boundary_value_check(&other.rec.u, u, &levels, Some(&z)).unwrap().max_spread();
        checks.push((format!("{name} 20 levels"), levels.len() == 20));
        checks.push((format!("{name} audit"), audit.failure_count() == 0));
        checks.push((format!("{name} spread"), spread <= 4.0 * h + 1e-2));
        detail.push(format!("{name} failures={} spread={spread:.2e}", audit.failure_count()));
    }
    let grid = Grid::square(129, -1.0, 1.0).unwrap();
    let mask = Arc::new(Mask::disk(&grid, (0.0, 0.0), 1.0).unwrap());
    let bump = ScalarField::from_fn(grid, mask, wlg_core::oracle::radial_bump);
    let levels = sample_levels(bump.boundary_range().0, bump.max_active(), &[], 0.0, 20);
    let control = boundary_intersection_audit(&bump, &levels).failure_count();
    checks.push(("bump control".to_string(), control >= 1));
    detail.push(format!("bump_failures={control}"));
    let named: Vec<(&str, bool)> = checks.iter().map(|(n, ok)| (n.as_str(), *ok)).collect();
    Outcome::new(&named, detail.join(" "))
}

/// Pointwise and windowed relative l2 errors of the recovered conductivity.
fn sigma_errors(cfg: &RunConfig, data: &PhantomData, a: &ScalarField) -> ((f64, f64), pipeline::Run) {
    let run = pipeline::reconstruct(cfg, a, &data.f, Init::BoundaryHarmonic).unwrap();
    let delta = cfg.delta0 * a.max_active();
    let eps_g = gradient_threshold(&run.rec.u, a, delta);
    let radius = (SIGMA_WINDOW / a.grid.h).round() as usize;
    let pointwise = recover_sigma(&run.rec.u, a, eps_g, delta).unwrap();
    let windowed = recover_sigma_windowed(&run.rec.u, a, eps_g, delta, radius).unwrap();
    let truth = &data.spec.sigma;
    ((pointwise.relative_l2_error(truth), windowed.relative_l2_error(truth)), run)
}

/// Physical half-width of the recovery window for noisy data.
const SIGMA_WINDOW: f64 = 0.05;

fn criterion7(extra: &mut Vec<(ScalarField, ScalarField, usize, usize)>) -> Outcome {
    let cfg = config("phantom=bump\nn=257\n");
    let data = Phantom::SmoothBump.data(257, 1e-12, 400_000).unwrap();
    let ((clean, clean_w), run) = sigma_errors(&cfg, &data, &data.a);
    extra.push((run.rec.u.clone(), run.f_used.clone(), run.rec.report.pre_clamp_violations, run.rec.report.active_nodes));
    let (mut noisy, mut noisy_w): (f64, f64) = (0.0, 0.0);
    for seed in [1, 2, 3] {
        let a = add_noise(&data.a, 0.01, seed);
        let ((e, ew), run) = sigma_errors(&cfg, &data, &a);
        extra.push((run.rec.u, run.f_used, run.rec.report.pre_clamp_violations, run.rec.report.active_nodes));
        noisy = noisy.max(e);
        noisy_w = noisy_w.max(ew);
    }
    Outcome::new(
        &[("clean <= 10%", clean <= 0.10), ("1% noise <= 20% (windowed)", noisy_w <= 0.20)],
        format!(
            "clean={:.2}% clean_windowed={:.2}% noisy_pointwise={:.1}% noisy_windowed={:.2}% (h=1/128, window 0.05, 3 seeds)",
            100.0 * clean,
            100.0 * clean_w,
            100.0 * noisy,
            100.0 * noisy_w
        ),
    )
}

fn criterion8(dir: &Path) -> Outcome {
    fs::write(dir.join("det.cfg"), "phantom=bump\nn=65\nnoise=0.01\nnoise_seed=42\ninit=random:7\n").unwrap();
    let cfg = path(dir, "det.cfg");
    let mut runs: Vec<PathBuf> = Vec::new();
    let mut codes_ok = true;
    for r in ["run1", "run2"] {
        let root = dir.join(r);
        let syn = root.join("syn");
        codes_ok &= wlg(&["synth", "--config", &cfg, "--out", &path(&root, "syn")]).0 == 0;
        codes_ok &= wlg(&[
            "reconstruct", "--config", &cfg,
            "--mask", &path(&syn, "mask.wlgf"), "--a", &path(&syn, "a.wlgf"), "--f", &path(&syn, "f.wlgf"),
            "--out", &path(&root, "rec"),
        ])
        .0 == 0;
        runs.push(root);
    }
    let mut identical = true;
    let mut files = 0;
    for sub in ["syn", "rec"] {
        let mut names: Vec<_> = fs::read_dir(runs[0].join(sub)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let a = fs::read(runs[0].join(sub).join(&name)).unwrap();
            let b = fs::read(runs[1].join(sub).join(&name)).unwrap_or_default();
            identical &= a == b;
            files += 1;
        }
    }

    let grid = Grid::square(17, -1.0, 1.0).unwrap();
    let mask = Arc::new(Mask::disk(&grid, (0.0, 0.0), 1.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut round_trip = true;
    let mut adjoint: f64 = 0.0;
    let mut gauss: f64 = 0.0;
    for t in 0..50 {
        let u = ScalarField::from_fn(grid, mask.clone(), |_, _| rng.gen_range(-1e3..1e3));
        let file = dir.join(format!("rt{t}.wlgf"));
        FieldFile::scalar(&u).write(&file).unwrap();
        let back = read_scalar(&file, &grid, &mask).unwrap();
        round_trip &= u.values.iter().zip(&back.values).all(|(x, y)| x.to_bits() == y.to_bits());

        let px = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let py = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = VectorField::from_components(grid, mask.clone(), px, py).unwrap();
        let mut u0 = ScalarField::from_fn(grid, mask.clone(), |_, _| rng.gen_range(-1.0..1.0));
        for k in 0..grid.len() {
            if mask.is_boundary(k) {
                u0.values[k] = 0.0;
            }
        }
        let lhs = dot_edges(&grad(&u0), &b);
        adjoint = adjoint.max((lhs + dot_nodes(&u0, &div(&b))).abs() / (1.0 + lhs.abs()));
        let f = ScalarField::from_fn(grid, mask.clone(), |_, _| rng.gen_range(-1.0..1.0));
        gauss = gauss.max(gauss_green_check(&u0.map(|v| v + 0.5), &b, &f));
    }
    Outcome::new(
        &[
            ("commands exit 0", codes_ok),
            ("byte-identical reruns", identical && files > 0),
            ("round trip", round_trip),
            ("adjoint defect", adjoint <= 1e-12),
            ("gauss-green defect", gauss <= 1e-12),
        ],
        format!("files_compared={files} adjoint={adjoint:.1e} gauss_green={gauss:.1e}"),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Outcome { pass: false, detail: "panicked".into() })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    results.push((1, "example1 reproduction", guarded(|| criterion1(&subdir(dir, "c1")))));
    results.push((3, "forward solver", guarded(criterion3)));
    results.push((8, "determinism and round trips", guarded(|| criterion8(&subdir(dir, "c8")))));
    let s = std::panic::catch_unwind(shared).ok();
    let mut extra = Vec::new();
    results.push((7, "conductivity recovery", guarded(|| criterion7(&mut extra))));
    let refs: Vec<_> = extra.iter().map(|(u, f, v, a)| (u, f, *v, *a)).collect();
    match &s {
        Some(s) => {
            results.push((2, "strong duality", guarded(|| criterion2(s))));
            results.push((4, "uniqueness harness", guarded(|| criterion4(s))));
            results.push((5, "maximum principle", guarded(|| criterion5(s, &refs))));
            results.push((6, "level-set structure", guarded(|| criterion6(s))));
        }
        None => {
            for (n, name) in [(2, "strong duality"), (4, "uniqueness harness"), (5, "maximum principle"), (6, "level-set structure")] {
                results.push((n, name, Outcome { pass: false, detail: "shared reconstructions panicked".into() }));
            }
        }
    }
    results.sort_by_key(|r| r.0);

    let mut all = true;
    for (n, name, o) in &results {
        all &= o.pass;
        println!("[{}] criterion {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance finished in {:.1}s", started.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
