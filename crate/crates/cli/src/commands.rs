use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use wlg_core::certificate::{certify as run_certify, gauss_green_check, gradient_threshold, TolSpec};
use wlg_core::forward::{add_boundary_noise, add_noise, boundary_flux, solve_with_inclusions};
use wlg_core::io::{pgm_bytes, read_mask, read_scalar, read_vector, sha256_hex, FieldFile, Manifest, RunConfig};
use wlg_core::minimizer::SolveReport;
use wlg_core::oracle::{compare, recover_sigma_windowed, Domain, Phantom};
use wlg_core::pipeline::{self, Run};
use wlg_core::structure::{
    admissibility_diagnostics, boundary_intersection_audit, level_boundary_value_check, lipschitz_estimate,
    sample_levels,
};
use wlg_core::{Error, Grid, Mask, ScalarField, VectorField};

use crate::Inputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Threshold(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(
                Error::Io(_)
                | Error::Config { .. }
                | Error::Format(_)
                | Error::UnknownPhantom(_)
                | Error::InvalidGrid(_)
                | Error::InvalidMask(_)
                | Error::InvalidDomain(_)
                | Error::GridMismatch,
            ) => 2,
            _ => 1,
        }
    }
}

type CliResult = std::result::Result<(), CliError>;

fn out_dir(path: &Path) -> std::result::Result<(), CliError> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn config_manifest(command: &str, cfg: &RunConfig) -> Manifest {
    let mut m = Manifest::new(command);
    m.set("config_sha256", cfg.hash());
    m.set("phantom", cfg.phantom.name());
    m.set("domain", cfg.domain.name());
    m.set("n", cfg.n);
    m.set("noise_seed", cfg.noise_seed);
    m.set("f_noise_seed", cfg.f_noise_seed);
    m.set("init", cfg.init.label());
    m
}

fn args_manifest(command: &str, args: &[(&str, String)]) -> Manifest {
    let mut m = Manifest::new(command);
    let canonical = args.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k}={v}");
        s
    });
    m.set("config_sha256", sha256_hex(canonical.as_bytes()));
    for (k, v) in args {
        m.set(&format!("arg.{k}"), v);
    }
    m
}

fn record_input(m: &mut Manifest, name: &str, path: &Path) -> std::result::Result<(), CliError> {
    m.set(&format!("input.{name}"), format!("sha256:{}", sha256_hex(&fs::read(path)?)));
    Ok(())
}

fn write_scalar(m: &mut Manifest, dir: &Path, name: &str, u: &ScalarField) -> std::result::Result<(), CliError> {
    m.write_file(dir, &format!("{name}.wlgf"), &FieldFile::scalar(u).to_bytes())?;
    Ok(())
}

fn write_vector(m: &mut Manifest, dir: &Path, name: &str, p: &VectorField) -> std::result::Result<(), CliError> {
    m.write_file(dir, &format!("{name}.wlgf"), &FieldFile::vector(p).to_bytes())?;
    Ok(())
}

fn write_mask(m: &mut Manifest, dir: &Path, grid: &Grid, mask: &Mask) -> std::result::Result<(), CliError> {
    m.write_file(dir, "mask.wlgf", &FieldFile::mask(grid, mask).to_bytes())?;
    Ok(())
}

fn write_image(m: &mut Manifest, dir: &Path, name: &str, u: &ScalarField) -> std::result::Result<(), CliError> {
    m.write_file(dir, &format!("{name}.pgm"), &pgm_bytes(u))?;
    Ok(())
}

struct Loaded {
    grid: Grid,
    mask: Arc<Mask>,
    a: ScalarField,
    f: ScalarField,
}

fn load_inputs(inputs: &Inputs, m: &mut Manifest) -> std::result::Result<Loaded, CliError> {
    let (grid, mask) = read_mask(&inputs.mask)?;
    let a = read_scalar(&inputs.a, &grid, &mask)?;
    let f = read_scalar(&inputs.f, &grid, &mask)?;
    record_input(m, "mask", &inputs.mask)?;
    record_input(m, "a", &inputs.a)?;
    record_input(m, "f", &inputs.f)?;
    Ok(Loaded { grid, mask, a, f })
}

fn check_config_grid(cfg: &RunConfig, grid: &Grid) -> std::result::Result<(), CliError> {
    if cfg.n != grid.nx || cfg.n != grid.ny {
        eprintln!("wlg: note: config n={} differs from input grid {}x{}", cfg.n, grid.nx, grid.ny);
    }
    Ok(())
}

pub fn forward(config: &Path, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    out_dir(out)?;
    let spec = cfg.phantom.domain_spec_on(cfg.n, cfg.domain)?;
    let start = Instant::now();
    let sol = solve_with_inclusions(&spec, cfg.forward_tol, cfg.forward_max_iter, cfg.spread_tol)?;
    eprintln!("wlg: forward solve {} iterations in {:.2?}", sol.iterations, start.elapsed());
    let mut m = config_manifest("forward", &cfg);
    write_mask(&mut m, out, &spec.grid, &spec.mask)?;
    write_scalar(&mut m, out, "sigma", &spec.sigma)?;
    write_scalar(&mut m, out, "f", &spec.f)?;
    write_scalar(&mut m, out, "u", &sol.u)?;
    write_vector(&mut m, out, "J", &sol.current)?;
    write_scalar(&mut m, out, "a", &sol.a)?;
    write_image(&mut m, out, "u", &sol.u)?;
    write_image(&mut m, out, "a", &sol.a)?;

    let (net, abs) = boundary_flux(&sol.u, &sol.sigma);
    let mut r = String::new();
    let _ = writeln!(r, "iterations={}", sol.iterations);
    let _ = writeln!(r, "residual_norm={:e}", sol.residual_norm);
    let _ = writeln!(r, "boundary_flux_net={net:e}");
    let _ = writeln!(r, "boundary_flux_abs={abs:e}");
    let _ = writeln!(r, "boundary_flux_relative={:e}", if abs > 0.0 { net.abs() / abs } else { 0.0 });
    let _ = writeln!(r, "sigma_inf={:e}", spec.sigma_inf);
    let _ = writeln!(r, "sigma_ins={:e}", spec.sigma_ins);
    if let Some(inc) = &sol.inclusions {
        for c in &inc.conducting {
            let _ = writeln!(r, "oinf.{}.nodes={}", c.id, c.nodes);
            let _ = writeln!(r, "oinf.{}.mean={:e}", c.id, c.mean);
            let _ = writeln!(r, "oinf.{}.spread={:e}", c.id, c.spread);
            let _ = writeln!(r, "oinf.{}.flux_relative={:e}", c.id, c.flux.abs() / inc.boundary_flux_scale.max(1e-300));
        }
        let _ = writeln!(r, "o0.flux_relative={:e}", inc.insulating_flux.abs() / inc.boundary_flux_scale.max(1e-300));
    }
    m.write_file(out, "forward_report.txt", r.as_bytes())?;
    m.save(out)?;
    Ok(())
}

pub fn synth(config: &Path, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    out_dir(out)?;
    let data = cfg.phantom.data_on(cfg.n, cfg.domain, cfg.forward_tol, cfg.forward_max_iter)?;
    let a = add_noise(&data.a, cfg.noise, cfg.noise_seed);
    let f = add_boundary_noise(&data.f, cfg.f_noise, cfg.f_noise_seed);
    let mut m = config_manifest("synth", &cfg);
    m.set("noise", cfg.noise);
    m.set("f_noise", cfg.f_noise);
    write_mask(&mut m, out, &data.spec.grid, &data.spec.mask)?;
    write_scalar(&mut m, out, "a", &a)?;
    write_scalar(&mut m, out, "a_clean", &data.a)?;
    write_scalar(&mut m, out, "f", &f)?;
    write_scalar(&mut m, out, "sigma", &data.spec.sigma)?;
    write_scalar(&mut m, out, "u_ref", &data.reference)?;
    if let Some(sol) = &data.forward {
        write_vector(&mut m, out, "J", &sol.current)?;
    }
    write_image(&mut m, out, "a", &a)?;
    m.save(out)?;
    Ok(())
}

fn solve_report(report: &SolveReport, run_traced: bool, cfg: &RunConfig) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "converged={}", report.converged);
    let _ = writeln!(r, "iterations={}", report.iterations);
    let _ = writeln!(r, "primal={:e}", report.primal);
    let _ = writeln!(r, "dual={:e}", report.dual);
    let _ = writeln!(r, "gap={:e}", report.gap);
    let _ = writeln!(r, "gap_relative={:e}", report.gap / report.primal.abs().max(1e-300));
    let _ = writeln!(r, "pre_clamp_violations={}", report.pre_clamp_violations);
    let _ = writeln!(r, "violation_fraction={:e}", report.violation_fraction());
    let _ = writeln!(r, "active_nodes={}", report.active_nodes);
    let _ = writeln!(r, "divergence_residual={:e}", report.divergence_residual);
    let _ = writeln!(r, "zero_weight_nodes={}", report.zero_weight_nodes);
    if report.zero_weight_nodes > 0 {
        let _ = writeln!(r, "note=solution determined modulo the zero set of a");
    }
    let _ = writeln!(r, "trace_transfer={run_traced}");
    let _ = writeln!(r, "trace_passes={}", if run_traced { cfg.trace_passes } else { 0 });
    r
}

pub fn reconstruct(config: &Path, inputs: &Inputs, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    out_dir(out)?;
    let mut m = config_manifest("reconstruct", &cfg);
    let d = load_inputs(inputs, &mut m)?;
    check_config_grid(&cfg, &d.grid)?;
    let start = Instant::now();
    let (run, failure) = match pipeline::reconstruct(&cfg, &d.a, &d.f, cfg.init.clone()) {
        Ok(run) => (run, None),
        Err(Error::NotConverged(rec)) => {
            let msg = format!(
                "minimizer stopped after {} iterations with relative gap {:e}",
                rec.report.iterations,
                rec.report.relative_gap()
            );
            (Run { rec: *rec, f_used: d.f.clone(), traced: false }, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    eprintln!(
        "wlg: reconstruct {} iterations in {:.2?}, relative gap {:e}",
        run.rec.report.iterations,
        start.elapsed(),
        run.rec.report.gap / run.rec.report.primal.abs().max(1e-300)
    );
    write_mask(&mut m, out, &d.grid, &d.mask)?;
    write_scalar(&mut m, out, "u_rec", &run.rec.u)?;
    write_vector(&mut m, out, "b", &run.rec.b)?;
    write_scalar(&mut m, out, "f_used", &run.f_used)?;
    write_image(&mut m, out, "u_rec", &run.rec.u)?;
    let report = solve_report(&run.rec.report, run.traced, &cfg);
    m.write_file(out, "reconstruct_report.txt", report.as_bytes())?;
    m.save(out)?;
    match failure {
        Some(msg) => Err(CliError::Threshold(msg)),
        None => Ok(()),
    }
}

fn tolerances(config: Option<&Path>) -> std::result::Result<(TolSpec, Option<RunConfig>), CliError> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let mut tol = TolSpec::default();
    if let Some(c) = &cfg {
        tol.delta_rel = c.delta0;
        tol.eps_g = c.eps_g;
    }
    Ok((tol, cfg))
}

pub fn certify(inputs: &Inputs, u: &Path, b: &Path, config: Option<&Path>, out: &Path) -> CliResult {
    let (tol, cfg) = tolerances(config)?;
    out_dir(out)?;
    let mut m = match &cfg {
        Some(c) => config_manifest("certify", c),
        None => args_manifest("certify", &[]),
    };
    let d = load_inputs(inputs, &mut m)?;
    let uf = read_scalar(u, &d.grid, &d.mask)?;
    let bf = read_vector(b, &d.grid, &d.mask)?;
    record_input(&mut m, "u", u)?;
    record_input(&mut m, "b", b)?;
    let cert = run_certify(&uf, &bf, &d.a, &d.f, &tol)?;
    let mut text = cert.to_string();
    let _ = writeln!(text, "gauss_green_defect={:e}", gauss_green_check(&uf, &bf, &d.f));
    print!("{text}");
    m.write_file(out, "certificate.txt", text.as_bytes())?;
    m.save(out)?;
    if cert.passes() {
        Ok(())
    } else {
        Err(CliError::Threshold(format!("certificate failed: {}", cert.failures().join(", "))))
    }
}

pub fn analyze(
    inputs: &Inputs,
    u: &Path,
    u_ref: Option<&Path>,
    levels: usize,
    sigma_window: usize,
    config: Option<&Path>,
    out: &Path,
) -> CliResult {
    let (tol, cfg) = tolerances(config)?;
    out_dir(out)?;
    let args = [("levels", levels.to_string()), ("sigma_window", sigma_window.to_string())];
    let mut m = match &cfg {
        Some(c) => config_manifest("analyze", c),
        None => args_manifest("analyze", &args),
    };
    m.set("levels", levels);
    m.set("sigma_window", sigma_window);
    let d = load_inputs(inputs, &mut m)?;
    let uf = read_scalar(u, &d.grid, &d.mask)?;
    record_input(&mut m, "u", u)?;
    let reference = match u_ref {
        Some(p) => {
            record_input(&mut m, "u_ref", p)?;
            read_scalar(p, &d.grid, &d.mask)?
        }
        None => uf.clone(),
    };

    let delta = tol.delta_rel * d.a.max_active().max(0.0);
    let eps_g = tol.eps_g.unwrap_or_else(|| gradient_threshold(&uf, &d.a, delta));
    let report = admissibility_diagnostics(&uf, &d.a, delta.max(f64::MIN_POSITIVE), eps_g.max(f64::MIN_POSITIVE))?;
    let band = 4.0 * d.grid.h * lipschitz_estimate(&uf);
    let z = report.z_set(&uf, band);
    let (lo, hi) = d.f.boundary_range();
    let lv = sample_levels(lo, hi, &report.plateau_values, band, levels);
    let audit = boundary_intersection_audit(&uf, &lv);
    let values = level_boundary_value_check(&reference, &uf, &lv, Some(&z))?;
    let sigma = recover_sigma_windowed(&uf, &d.a, eps_g, delta, sigma_window)?;

    let mut adm = String::new();
    let _ = writeln!(adm, "delta={delta:e}");
    let _ = writeln!(adm, "eps_g={eps_g:e}");
    let _ = writeln!(adm, "zero_set_nodes={}", report.zero_set_nodes);
    let _ = writeln!(adm, "zero_set_components={}", report.zero_set_components.len());
    let _ = writeln!(adm, "o_inf_nodes={}", report.o_inf_nodes);
    let _ = writeln!(adm, "o_inf_components={}", report.o_inf_components.len());
    let plateaus: Vec<String> = report.plateau_values.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(adm, "plateau_values={}", plateaus.join(","));
    let _ = writeln!(adm, "plateau_measure={:e}", report.plateau_measure);
    let _ = writeln!(adm, "continuity_defect_of_a={:e}", report.continuity_defect_of_a);
    let _ = writeln!(adm, "z_band={band:e}");
    let _ = writeln!(adm, "levels_audited={}", lv.len());
    let _ = writeln!(adm, "audit_failures={}", audit.failure_count());
    let _ = writeln!(adm, "level_value_max_spread={:e}", values.max_spread());
    let _ = writeln!(adm, "sigma_determined_nodes={}", sigma.determined_count());
    print!("{adm}");

    m.write_file(out, "audit.csv", audit.to_csv().as_bytes())?;
    m.write_file(out, "level_values.csv", values.to_csv().as_bytes())?;
    m.write_file(out, "admissibility.txt", adm.as_bytes())?;
    write_scalar(&mut m, out, "sigma_rec", &sigma.sigma)?;
    write_image(&mut m, out, "sigma_rec", &sigma.sigma)?;
    m.save(out)?;
    if audit.failure_count() > 0 {
        return Err(CliError::Threshold(format!(
            "{} level-set components do not reach the boundary",
            audit.failure_count()
        )));
    }
    Ok(())
}

pub fn uniqtest(config: &Path, inputs: &Inputs, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    out_dir(out)?;
    let mut m = config_manifest("uniqtest", &cfg);
    m.set("inits", cfg.inits.iter().map(|i| i.label()).collect::<Vec<_>>().join(","));
    let d = load_inputs(inputs, &mut m)?;
    check_config_grid(&cfg, &d.grid)?;
    let start = Instant::now();
    let report = pipeline::uniqueness(&cfg, &d.a, &d.f)?;
    eprintln!("wlg: uniqtest {} runs in {:.2?}", report.runs.len(), start.elapsed());
    for (label, run) in report.labels.iter().zip(&report.runs) {
        let name = format!("u_{}", label.replace(':', "_"));
        write_scalar(&mut m, out, &name, &run.rec.u)?;
    }
    m.write_file(out, "uniq_distances.csv", report.to_csv().as_bytes())?;
    let mut s = String::new();
    let _ = writeln!(s, "area={:e}", report.area);
    let _ = writeln!(s, "range_f={:e}", report.range_f);
    let _ = writeln!(s, "tolerance={:e}", report.tolerance);
    let _ = writeln!(s, "max_distance={:e}", report.max_distance());
    let _ = writeln!(s, "pass={}", report.passes());
    print!("{s}");
    m.write_file(out, "uniq_report.txt", s.as_bytes())?;
    m.save(out)?;
    if report.passes() {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "max pairwise distance {:e} exceeds {:e}",
            report.max_distance(),
            report.tolerance
        )))
    }
}

pub fn oracle(
    phantom: &str,
    n: usize,
    domain: &str,
    compare_with: Option<&Path>,
    max_linf: f64,
    max_l2: Option<f64>,
    out: &Path,
) -> CliResult {
    let p = Phantom::from_name(phantom)?;
    let dom = Domain::from_name(domain)?;
    out_dir(out)?;
    let mut args = vec![("phantom", p.name().to_string()), ("n", n.to_string()), ("domain", dom.name().to_string())];
    args.push(("max_linf", format!("{max_linf:?}")));
    if let Some(l2) = max_l2 {
        args.push(("max_l2", format!("{l2:?}")));
    }
    let mut m = args_manifest("oracle", &args);
    let grid = p.grid(n)?;
    let mask = p.mask_on(&grid, dom)?;
    let reference = match p {
        Phantom::Example1 | Phantom::Example1Conducting if dom == Domain::Disk => {
            ScalarField::from_fn(grid, mask.clone(), |x, y| p.closed_form(x, y).unwrap_or(0.0))
        }
        _ => p.data_on(n, dom, 1e-12, 200_000)?.reference,
    };
    write_mask(&mut m, out, &grid, &mask)?;
    write_scalar(&mut m, out, "u_exact", &reference)?;
    write_image(&mut m, out, "u_exact", &reference)?;
    let Some(path) = compare_with else {
        m.save(out)?;
        return Ok(());
    };
    record_input(&mut m, "compare", path)?;
    let field = read_scalar(path, &grid, &mask)?;
    let (linf, l2) = compare(&field, &reference);
    let pass = linf <= max_linf && max_l2.map_or(true, |t| l2 <= t);
    let mut s = String::new();
    let _ = writeln!(s, "linf={linf:e}");
    let _ = writeln!(s, "rel_l2={l2:e}");
    let _ = writeln!(s, "pass={pass}");
    print!("{s}");
    m.write_file(out, "compare.txt", s.as_bytes())?;
    m.save(out)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Threshold(format!("error linf={linf:e} rel_l2={l2:e} exceeds tolerance")))
    }
}
