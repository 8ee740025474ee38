//! Field files, run configuration, PGM images and run manifests.
//!
//! A field file is one ASCII header line
//! `WLGF1 <nx> <ny> <h> <origin_x> <origin_y> <kind>` followed by a
//! little-endian payload: `nx*ny` f64 for `scalar`, `2*nx*ny` f64 (all `px`
//! slots, then all `py` slots) for `vector`, and one byte per node for `mask`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, NodeKind, ScalarField, VectorField};
use crate::minimizer::{balanced_steps, Init, SolverConfig, DEFAULT_STEP_RATIO};
use crate::oracle::{Domain, Phantom};

const MAGIC: &str = "WLGF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
    Mask,
}

impl FieldKind {
    fn name(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Vector => "vector",
            FieldKind::Mask => "mask",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Scalar(Vec<f64>),
    Vector(Vec<f64>, Vec<f64>),
    Mask(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub grid: Grid,
    pub payload: Payload,
}

impl FieldFile {
    pub fn kind(&self) -> FieldKind {
        match self.payload {
            Payload::Scalar(_) => FieldKind::Scalar,
            Payload::Vector(..) => FieldKind::Vector,
            Payload::Mask(_) => FieldKind::Mask,
        }
    }

    pub fn scalar(u: &ScalarField) -> Self {
        Self { grid: u.grid, payload: Payload::Scalar(u.values.clone()) }
    }

    pub fn vector(p: &VectorField) -> Self {
        Self { grid: p.grid, payload: Payload::Vector(p.px.clone(), p.py.clone()) }
    }

    pub fn mask(grid: &Grid, mask: &Mask) -> Self {
        Self { grid: *grid, payload: Payload::Mask(mask.kinds().iter().map(|k| k.code()).collect()) }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = format!(
            "{MAGIC} {} {} {:?} {:?} {:?} {}\n",
            g.nx,
            g.ny,
            g.h,
            g.origin.0,
            g.origin.1,
            self.kind().name()
        )
        .into_bytes();
        match &self.payload {
            Payload::Scalar(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Vector(px, py) => px.iter().chain(py).for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Mask(m) => out.extend_from_slice(m),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("header is not ASCII".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 7 || parts[0] != MAGIC {
            return Err(Error::Format(format!("bad header '{header}'")));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad integer '{s}'")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{s}'")));
        let grid = Grid::new(int(parts[1])?, int(parts[2])?, real(parts[3])?, (real(parts[4])?, real(parts[5])?))?;
        let body = &bytes[nl + 1..];
        let n = grid.len();
        let floats = |count: usize| -> Result<Vec<f64>> {
            if body.len() != 8 * count {
                return Err(Error::Format(format!("payload has {} bytes, expected {}", body.len(), 8 * count)));
            }
            Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
        };
        let payload = match parts[6] {
            "scalar" => Payload::Scalar(floats(n)?),
            "vector" => {
                let mut v = floats(2 * n)?;
                let py = v.split_off(n);
                Payload::Vector(v, py)
            }
            "mask" => {
                if body.len() != n {
                    return Err(Error::Format(format!("payload has {} bytes, expected {n}", body.len())));
                }
                Payload::Mask(body.to_vec())
            }
            other => return Err(Error::Format(format!("unknown kind '{other}'"))),
        };
        Ok(Self { grid, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn into_mask(self) -> Result<(Grid, Mask)> {
        let Payload::Mask(codes) = self.payload else {
            return Err(Error::Format("expected a mask file".into()));
        };
        let kinds = codes
            .iter()
            .map(|&c| NodeKind::from_code(c).ok_or_else(|| Error::Format(format!("bad node code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let mask = Mask::new(self.grid.nx, self.grid.ny, kinds)?;
        Ok((self.grid, mask))
    }

    pub fn into_scalar(self, mask: Arc<Mask>) -> Result<ScalarField> {
        let Payload::Scalar(values) = self.payload else {
            return Err(Error::Format("expected a scalar file".into()));
        };
        ScalarField::from_values(self.grid, mask, values)
    }

    pub fn into_vector(self, mask: Arc<Mask>) -> Result<VectorField> {
        let Payload::Vector(px, py) = self.payload else {
            return Err(Error::Format("expected a vector file".into()));
        };
        VectorField::from_components(self.grid, mask, px, py)
    }
}

pub fn read_mask(path: &Path) -> Result<(Grid, Arc<Mask>)> {
    let (grid, mask) = FieldFile::read(path)?.into_mask()?;
    Ok((grid, Arc::new(mask)))
}

/// Reads a scalar file and checks it lives on `grid`.
pub fn read_scalar(path: &Path, grid: &Grid, mask: &Arc<Mask>) -> Result<ScalarField> {
    let file = FieldFile::read(path)?;
    if file.grid != *grid {
        return Err(Error::Format(format!("{} is on a different grid", path.display())));
    }
    file.into_scalar(mask.clone())
}

pub fn read_vector(path: &Path, grid: &Grid, mask: &Arc<Mask>) -> Result<VectorField> {
    let file = FieldFile::read(path)?;
    if file.grid != *grid {
        return Err(Error::Format(format!("{} is on a different grid", path.display())));
    }
    file.into_vector(mask.clone())
}

/// 8-bit binary PGM with min-max scaling over active nodes; exterior nodes
/// are black and a constant field renders as 128. The top row is the
/// largest `y`.
pub fn pgm_bytes(u: &ScalarField) -> Vec<u8> {
    let (nx, ny) = (u.grid.nx, u.grid.ny);
    let lo = u.min_active();
    let hi = u.max_active();
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for j in (0..ny).rev() {
        for i in 0..nx {
            let k = u.grid.index(i, j);
            let px = if !u.mask.is_active(k) {
                0
            } else if !(hi > lo) {
                128
            } else {
                (255.0 * (u.values[k] - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
            };
            out.push(px);
        }
    }
    out
}

pub fn emit_image(u: &ScalarField, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(u))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Keys accepted in a run configuration file.
pub const CONFIG_KEYS: [&str; 22] = [
    "domain", "n", "phantom", "noise", "noise_seed", "f_noise", "f_noise_seed", "maxIter", "gapTol", "tau",
    "sigmaStep", "theta", "init", "inits", "trace_passes", "delta0", "epsG", "spreadTol", "uniqTol", "forwardTol",
    "forwardMaxIter", "checkEvery",
];

/// Plain `key=value` run configuration. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: Domain,
    pub n: usize,
    pub phantom: Phantom,
    pub noise: f64,
    pub noise_seed: u64,
    pub f_noise: f64,
    pub f_noise_seed: u64,
    pub max_iter: usize,
    pub gap_tol: f64,
    /// `None` picks balanced steps on the stability bound.
    pub tau: Option<f64>,
    pub sigma_step: Option<f64>,
    pub theta: f64,
    pub init: Init,
    /// Initializations compared by the uniqueness test.
    pub inits: Vec<Init>,
    pub trace_passes: usize,
    /// Relative to `max a`.
    pub delta0: f64,
    /// `None` selects the median-based threshold.
    pub eps_g: Option<f64>,
    pub spread_tol: f64,
    /// Pairwise L1 tolerance as a fraction of `area * range(f)`.
    pub uniq_tol: f64,
    pub forward_tol: f64,
    pub forward_max_iter: usize,
    pub check_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Disk,
            n: 129,
            phantom: Phantom::Example1,
            noise: 0.0,
            noise_seed: 42,
            f_noise: 0.0,
            f_noise_seed: 43,
            max_iter: 200_000,
            gap_tol: 1e-4,
            tau: None,
            sigma_step: None,
            theta: 1.0,
            init: Init::BoundaryHarmonic,
            inits: vec![Init::Zero, Init::BoundaryHarmonic, Init::Random(1), Init::Random(2), Init::Random(3)],
            trace_passes: 3,
            delta0: 1e-3,
            eps_g: None,
            spread_tol: 1e-3,
            uniq_tol: 1e-2,
            forward_tol: 1e-12,
            forward_max_iter: 200_000,
            check_every: 20,
        }
    }
}

pub fn parse_init(s: &str) -> Option<Init> {
    match s {
        "zero" => Some(Init::Zero),
        "harmonic" => Some(Init::BoundaryHarmonic),
        _ => s.strip_prefix("random:").and_then(|seed| seed.parse().ok()).map(Init::Random),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line, message };
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || value.parse::<f64>().map_err(|_| err(format!("{key}: bad number '{value}'")));
            let int = || value.parse::<u64>().map_err(|_| err(format!("{key}: bad integer '{value}'")));
            let init = |s: &str| parse_init(s).ok_or_else(|| err(format!("{key}: bad initialization '{s}'")));
            match key {
                "domain" => cfg.domain = Domain::from_name(value).map_err(|e| err(e.to_string()))?,
                "n" => cfg.n = int()? as usize,
                "phantom" => cfg.phantom = Phantom::from_name(value).map_err(|e| err(e.to_string()))?,
                "noise" => cfg.noise = real()?,
                "noise_seed" => cfg.noise_seed = int()?,
                "f_noise" => cfg.f_noise = real()?,
                "f_noise_seed" => cfg.f_noise_seed = int()?,
                "maxIter" => cfg.max_iter = int()? as usize,
                "gapTol" => cfg.gap_tol = real()?,
                "tau" => cfg.tau = Some(real()?),
                "sigmaStep" => cfg.sigma_step = Some(real()?),
                "theta" => cfg.theta = real()?,
                "init" => cfg.init = init(value)?,
                "inits" => cfg.inits = value.split(',').map(|s| init(s.trim())).collect::<Result<_>>()?,
                "trace_passes" => cfg.trace_passes = int()? as usize,
                "delta0" => cfg.delta0 = real()?,
                "epsG" => cfg.eps_g = Some(real()?),
                "spreadTol" => cfg.spread_tol = real()?,
                "uniqTol" => cfg.uniq_tol = real()?,
                "forwardTol" => cfg.forward_tol = real()?,
                "forwardMaxIter" => cfg.forward_max_iter = int()? as usize,
                "checkEvery" => cfg.check_every = int()? as usize,
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        if cfg.n < 3 {
            return Err(Error::Config { line: 0, message: format!("n must be at least 3, got {}", cfg.n) });
        }
        if cfg.inits.is_empty() {
            return Err(Error::Config { line: 0, message: "inits must not be empty".into() });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text: every key in a fixed order, parseable by [`RunConfig::parse`].
    pub fn canonical(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("domain", self.domain.name().to_string());
        m.insert("n", self.n.to_string());
        m.insert("phantom", self.phantom.name().to_string());
        m.insert("noise", format!("{:?}", self.noise));
        m.insert("noise_seed", self.noise_seed.to_string());
        m.insert("f_noise", format!("{:?}", self.f_noise));
        m.insert("f_noise_seed", self.f_noise_seed.to_string());
        m.insert("maxIter", self.max_iter.to_string());
        m.insert("gapTol", format!("{:?}", self.gap_tol));
        if let Some(t) = self.tau {
            m.insert("tau", format!("{t:?}"));
        }
        if let Some(s) = self.sigma_step {
            m.insert("sigmaStep", format!("{s:?}"));
        }
        m.insert("theta", format!("{:?}", self.theta));
        m.insert("init", self.init.label());
        m.insert("inits", self.inits.iter().map(Init::label).collect::<Vec<_>>().join(","));
        m.insert("trace_passes", self.trace_passes.to_string());
        m.insert("delta0", format!("{:?}", self.delta0));
        if let Some(e) = self.eps_g {
            m.insert("epsG", format!("{e:?}"));
        }
        m.insert("spreadTol", format!("{:?}", self.spread_tol));
        m.insert("uniqTol", format!("{:?}", self.uniq_tol));
        m.insert("forwardTol", format!("{:?}", self.forward_tol));
        m.insert("forwardMaxIter", self.forward_max_iter.to_string());
        m.insert("checkEvery", self.check_every.to_string());
        m.into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn solver(&self, grid: &Grid) -> SolverConfig {
        let (tau, sigma_step) = match (self.tau, self.sigma_step) {
            (Some(t), Some(s)) => (t, s),
            (Some(t), None) => {
                let l = crate::minimizer::gradient_norm_bound(grid);
                (t, 1.0 / (t * l * l))
            }
            (None, Some(s)) => {
                let l = crate::minimizer::gradient_norm_bound(grid);
                (1.0 / (s * l * l), s)
            }
            (None, None) => balanced_steps(grid, DEFAULT_STEP_RATIO),
        };
        SolverConfig {
            max_iter: self.max_iter,
            gap_tol: self.gap_tol,
            tau,
            sigma_step,
            theta: self.theta,
            init: self.init.clone(),
            check_every: self.check_every.max(1),
        }
    }
}

/// Reproducibility record: plain `key=value` lines with a sha256 per output.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
    files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("tool", "wlg");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write_file(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn files(&self) -> impl Iterator<Item = (&String, &String)> {
        self.files.iter()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in &self.files {
            let _ = writeln!(s, "file.{k}=sha256:{v}");
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.txt"), self.render())?;
        Ok(())
    }
}
