//! Synthetic experiments: model specifications, data generation, the
//! estimation pipeline, scoring and replication sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{product_cf, Dist, DistError, GSpec};
use crate::grid::{inverse_transform, make_grids, Grid, GridError, GridFn, C64};
use crate::io::{self, IoError};
use crate::moments::{
    conditional_mean_on_grid, ecf, ecf_noise_scale, silverman_bandwidth, MomentFns, MomentsError,
    Sample,
};
use crate::regularization::{
    apply_cutoff_radius, check_phi_class, classify_smoothness, heuristic_cutoff, lemma2_cutoff,
    RegularizationError,
};
use crate::solvers::{self, ModelSolution, SolveError, SolveOptions, Variant};
use crate::support::SupportMask;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}", match .line { Some(l) => format!("config line {l}: {msg}"), None => format!("config: {msg}") })]
    Config { line: Option<usize>, msg: String },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::Spec(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }

    fn config(line: usize, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            line: Some(line),
            msg: msg.into(),
        }
    }
}

impl From<SolveError> for HarnessError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Moments(m) => m.into(),
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<MomentsError> for HarnessError {
    fn from(e: MomentsError) -> Self {
        match e {
            MomentsError::MissingColumn(_) | MomentsError::DimensionMismatch { .. } => {
                HarnessError::Spec(e.to_string())
            }
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<GridError> for HarnessError {
    fn from(e: GridError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<RegularizationError> for HarnessError {
    fn from(e: RegularizationError) -> Self {
        HarnessError::Spec(e.to_string())
    }
}

/// One `key=value` line of a config or spec file.
#[derive(Debug, Clone, PartialEq)]
pub struct KvLine {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Flat `key=value` text; `#` starts a comment; duplicate keys are errors.
pub fn parse_kv(text: &str) -> Result<Vec<KvLine>, HarnessError> {
    let mut out: Vec<KvLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| {
            HarnessError::config(line, format!("expected key=value, got `{body}`"))
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(HarnessError::config(line, "empty key"));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(HarnessError::config(
                line,
                format!("duplicate key `{key}` (first on line {})", prev.line),
            ));
        }
        out.push(KvLine {
            line,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    M1,
    M2,
    M3,
    M4,
    M4a,
    M5,
    M6,
    M7,
    Ar1,
    Factor,
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "1" => ModelId::M1,
            "2" => ModelId::M2,
            "3" => ModelId::M3,
            "4" => ModelId::M4,
            "4a" => ModelId::M4a,
            "5" => ModelId::M5,
            "6" => ModelId::M6,
            "7" => ModelId::M7,
            "ar1" => ModelId::Ar1,
            "factor" => ModelId::Factor,
            other => return Err(format!("unknown model `{other}`")),
        })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::M1 => "1",
            ModelId::M2 => "2",
            ModelId::M3 => "3",
            ModelId::M4 => "4",
            ModelId::M4a => "4a",
            ModelId::M5 => "5",
            ModelId::M6 => "6",
            ModelId::M7 => "7",
            ModelId::Ar1 => "ar1",
            ModelId::Factor => "factor",
        };
        f.write_str(s)
    }
}

/// Forward model and latent laws of a synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: ModelId,
    pub variant: Variant,
    pub d: usize,
    pub xstar: Option<Dist>,
    pub u: Option<Dist>,
    pub ux: Option<Dist>,
    pub v: Option<Dist>,
    pub z: Option<Dist>,
    pub eta: Option<Dist>,
    pub eta1: Option<Dist>,
    pub g: Option<GSpec>,
    pub rho: Option<f64>,
    pub a_matrix: Option<DMatrix<f64>>,
    pub a_split: Option<usize>,
}

/// Keys understood by [`ModelSpec`].
pub const SPEC_KEYS: &[&str] = &[
    "model", "variant", "d", "xstar", "u", "ux", "v", "z", "eta", "eta1", "g", "rho", "a_matrix",
    "a_split",
];

fn parse_matrix(text: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad matrix entry `{v}`"))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, |r| r.len());
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err("matrix rows must have equal, non-zero length".into());
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn format_matrix(a: &DMatrix<f64>) -> String {
    (0..a.nrows())
        .map(|i| {
            (0..a.ncols())
                .map(|j| a[(i, j)].to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

impl ModelSpec {
    pub fn new(model: ModelId) -> Self {
        ModelSpec {
            model,
            variant: Variant::B,
            d: 1,
            xstar: None,
            u: None,
            ux: None,
            v: None,
            z: None,
            eta: None,
            eta1: None,
            g: None,
            rho: None,
            a_matrix: None,
            a_split: None,
        }
    }

    /// Build from parsed lines, returning the lines that are not spec keys.
    /// `model` may come from the lines or from `model_override`.
    pub fn from_lines(
        lines: &[KvLine],
        model_override: Option<ModelId>,
    ) -> Result<(Self, Vec<KvLine>), HarnessError> {
        let mut rest = Vec::new();
        let mut model = None;
        for l in lines {
            if l.key == "model" {
                let m: ModelId = l
                    .value
                    .parse()
                    .map_err(|e: String| HarnessError::config(l.line, e))?;
                model = Some((m, l.line));
            }
        }
        let model = match (model_override, model) {
            (Some(o), Some((m, line))) if o != m => {
                return Err(HarnessError::config(
                    line,
                    format!("file says model {m}, command line says {o}"),
                ))
            }
            (Some(o), _) => o,
            (None, Some((m, _))) => m,
            (None, None) => {
                return Err(HarnessError::Config {
                    line: None,
                    msg: "missing key `model`".into(),
                })
            }
        };
        let mut spec = ModelSpec::new(model);
        for l in lines {
            let e = |msg: String| HarnessError::config(l.line, format!("{}: {msg}", l.key));
            let dist = |v: &str| v.parse::<Dist>().map_err(|x: DistError| e(x.to_string()));
            match l.key.as_str() {
                "model" => {}
                "variant" => spec.variant = l.value.parse().map_err(e)?,
                "d" => {
                    spec.d = l
                        .value
                        .parse()
                        .ok()
                        .filter(|&d| (1..=crate::grid::MAX_DIM).contains(&d))
                        .ok_or_else(|| e("expected 1, 2 or 3".into()))?
                }
                "xstar" => spec.xstar = Some(dist(&l.value)?),
                "u" => spec.u = Some(dist(&l.value)?),
                "ux" => spec.ux = Some(dist(&l.value)?),
                "v" => spec.v = Some(dist(&l.value)?),
                "z" => spec.z = Some(dist(&l.value)?),
                "eta" => spec.eta = Some(dist(&l.value)?),
                "eta1" => spec.eta1 = Some(dist(&l.value)?),
                "g" => spec.g = Some(l.value.parse().map_err(|x: DistError| e(x.to_string()))?),
                "rho" => {
                    spec.rho = Some(
                        l.value
                            .parse()
                            .ok()
                            .filter(|r: &f64| r.is_finite())
                            .ok_or_else(|| e("expected a number".into()))?,
                    )
                }
                "a_matrix" => spec.a_matrix = Some(parse_matrix(&l.value).map_err(e)?),
                "a_split" => {
                    spec.a_split = Some(
                        l.value
                            .parse()
                            .map_err(|_| e("expected an integer".into()))?,
                    )
                }
                _ => rest.push(l.clone()),
            }
        }
        spec.validate()?;
        Ok((spec, rest))
    }

    /// Parse a spec file; every key must be a spec key.
    pub fn parse(text: &str, model_override: Option<ModelId>) -> Result<Self, HarnessError> {
        let lines = parse_kv(text)?;
        let (spec, rest) = Self::from_lines(&lines, model_override)?;
        if let Some(l) = rest.first() {
            return Err(HarnessError::config(
                l.line,
                format!("unknown key `{}`", l.key),
            ));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model={}\nvariant={:?}\nd={}\n",
            self.model, self.variant, self.d
        );
        let dists = [
            ("xstar", &self.xstar),
            ("u", &self.u),
            ("ux", &self.ux),
            ("v", &self.v),
            ("z", &self.z),
            ("eta", &self.eta),
            ("eta1", &self.eta1),
        ];
        for (k, d) in dists {
            if let Some(d) = d {
                s.push_str(&format!("{k}={d}\n"));
            }
        }
        if let Some(g) = &self.g {
            s.push_str(&format!("g={g}\n"));
        }
        if let Some(r) = self.rho {
            s.push_str(&format!("rho={r}\n"));
        }
        if let Some(a) = &self.a_matrix {
            s.push_str(&format!("a_matrix={}\n", format_matrix(a)));
        }
        if let Some(k) = self.a_split {
            s.push_str(&format!("a_split={k}\n"));
        }
        s
    }

    fn required(&self) -> &'static [&'static str] {
        match self.model {
            ModelId::M1 => &["xstar", "u"],
            ModelId::M2 => &["z", "u"],
            ModelId::M3 | ModelId::M4 | ModelId::M4a => &["xstar", "u", "ux"],
            ModelId::M5 => &["xstar", "u", "ux", "g"],
            ModelId::M6 => &["z", "u", "g"],
            ModelId::M7 => &["z", "u", "ux", "g"],
            ModelId::Ar1 => &["xstar", "u", "eta", "rho"],
            ModelId::Factor => &["xstar", "u", "ux", "a_matrix", "a_split"],
        }
    }

    fn has(&self, key: &str) -> bool {
        match key {
            "xstar" => self.xstar.is_some(),
            "u" => self.u.is_some(),
            "ux" => self.ux.is_some(),
            "z" => self.z.is_some(),
            "eta" => self.eta.is_some(),
            "g" => self.g.is_some(),
            "rho" => self.rho.is_some(),
            "a_matrix" => self.a_matrix.is_some(),
            "a_split" => self.a_split.is_some(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for k in self.required() {
            if !self.has(k) {
                return Err(HarnessError::Spec(format!(
                    "model {} needs `{k}`",
                    self.model
                )));
            }
        }
        let scalar = matches!(
            self.model,
            ModelId::M5 | ModelId::M6 | ModelId::M7 | ModelId::Ar1
        );
        if scalar && self.d != 1 {
            return Err(HarnessError::Spec(format!(
                "model {} is implemented for d=1 only",
                self.model
            )));
        }
        if self.model == ModelId::Ar1 && (self.rho.unwrap_or(0.0) - 1.0).abs() < 1e-6 {
            return Err(HarnessError::Spec("rho must differ from 1".into()));
        }
        if self.model == ModelId::Factor {
            let a = self.a_matrix.as_ref().expect("checked above");
            let split = self.a_split.expect("checked above");
            if a.ncols() != self.d {
                return Err(HarnessError::Spec(format!(
                    "a_matrix has {} columns, d={}",
                    a.ncols(),
                    self.d
                )));
            }
            if split == 0 || split >= a.nrows() {
                return Err(HarnessError::Spec(format!(
                    "a_split must lie in 1..{}",
                    a.nrows()
                )));
            }
        }
        Ok(())
    }

    fn dist(&self, d: &Option<Dist>) -> Dist {
        d.clone().unwrap_or(Dist::Point { at: 0.0 })
    }

    /// The CF scored by the harness and its name: `φ_x*` for models that
    /// recover it, `φ_u` for models 6 and 7. `None` when the spec lacks the
    /// laws it depends on.
    pub fn truth_cf(&self, grid: &Grid) -> Option<(&'static str, GridFn)> {
        match self.model {
            ModelId::M2 => {
                let z = product_cf(self.z.as_ref()?, grid);
                let u = product_cf(self.u.as_ref()?, grid);
                Some(("phi_xstar", z.mul(&u.conj()).expect("same grid")))
            }
            ModelId::M6 | ModelId::M7 => Some(("phi_u", product_cf(self.u.as_ref()?, grid))),
            _ => Some(("phi_xstar", product_cf(self.xstar.as_ref()?, grid))),
        }
    }

    /// Known error CF for models 1 and 2.
    pub fn known_phi_u(&self, grid: &Grid) -> Option<GridFn> {
        match self.model {
            ModelId::M1 | ModelId::M2 => Some(product_cf(self.u.as_ref()?, grid)),
            _ => None,
        }
    }
}

/// A generated sample together with the latent draws.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sample: Sample,
    pub truth_header: Vec<String>,
    pub truth: Vec<Vec<f64>>,
}

fn draws(d: &Dist, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| d.sample(rng)).collect()
}

fn names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("{prefix}{k}")).collect()
}

/// Draw `n` observations of the forward model. Deterministic in
/// `(spec, n, seed)`. Vector latents have independent components.
pub fn generate(spec: &ModelSpec, n: usize, seed: u64) -> Result<Generated, HarnessError> {
    spec.validate()?;
    if n < 2 {
        return Err(HarnessError::Spec(format!("need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d;
    let nd = n * d;
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let dist = |o: &Option<Dist>| spec.dist(o);
    let g = |x: f64| spec.g.as_ref().map_or(0.0, |g| g.eval(x));
    let (sample, cols): (Sample, Vec<(Vec<String>, Vec<f64>, usize)>) = match spec.model {
        ModelId::M1 => {
            let xs = draws(&dist(&spec.xstar), nd, &mut rng);
            let us = draws(&dist(&spec.u), nd, &mut rng);
            let s = Sample::new(d, add(&xs, &us), None, None, None)?;
            (s, vec![(names("xstar", d), xs, d), (names("u", d), us, d)])
        }
        ModelId::M2 => {
            let zs = draws(&dist(&spec.z), nd, &mut rng);
            let us = draws(&dist(&spec.u), nd, &mut rng);
            let xs = sub(&zs, &us);
            let s = Sample::new(d, zs, None, None, None)?;
            (s, vec![(names("xstar", d), xs, d), (names("u", d), us, d)])
        }
        ModelId::M3 | ModelId::M4 | ModelId::M4a => {
            let xs = draws(&dist(&spec.xstar), nd, &mut rng);
            let us = draws(&dist(&spec.u), nd, &mut rng);
            let uxs = draws(&dist(&spec.ux), nd, &mut rng);
            let s = Sample::new(d, add(&xs, &us), Some(add(&xs, &uxs)), None, None)?;
            (
                s,
                vec![
                    (names("xstar", d), xs, d),
                    (names("u", d), us, d),
                    (names("ux", d), uxs, d),
                ],
            )
        }
        ModelId::M5 => {
            let xs = draws(&dist(&spec.xstar), n, &mut rng);
            let us = draws(&dist(&spec.u), n, &mut rng);
            let uxs = draws(&dist(&spec.ux), n, &mut rng);
            let vs = draws(&dist(&spec.v), n, &mut rng);
            let y: Vec<f64> = xs.iter().zip(&vs).map(|(x, v)| g(*x) + v).collect();
            let s = Sample::new(1, add(&xs, &us), Some(add(&xs, &uxs)), Some(y), None)?;
            (
                s,
                vec![
                    (names("xstar", 1), xs, 1),
                    (names("u", 1), us, 1),
                    (names("ux", 1), uxs, 1),
                    (vec!["v".into()], vs, 1),
                ],
            )
        }
        ModelId::M6 => {
            let zs = draws(&dist(&spec.z), n, &mut rng);
            let us = draws(&dist(&spec.u), n, &mut rng);
            let vs = draws(&dist(&spec.v), n, &mut rng);
            let xs = sub(&zs, &us);
            let y: Vec<f64> = xs.iter().zip(&vs).map(|(x, v)| g(*x) + v).collect();
            let s = Sample::new(1, zs, Some(xs), Some(y), None)?;
            (s, vec![(names("u", 1), us, 1), (vec!["v".into()], vs, 1)])
        }
        ModelId::M7 => {
            let zs = draws(&dist(&spec.z), n, &mut rng);
            let us = draws(&dist(&spec.u), n, &mut rng);
            let uxs = draws(&dist(&spec.ux), n, &mut rng);
            let vs = draws(&dist(&spec.v), n, &mut rng);
            let xs = sub(&zs, &us);
            let y: Vec<f64> = xs.iter().zip(&vs).map(|(x, v)| g(*x) + v).collect();
            let s = Sample::new(1, zs, Some(add(&xs, &uxs)), Some(y), None)?;
            (
                s,
                vec![
                    (names("xstar", 1), xs, 1),
                    (names("u", 1), us, 1),
                    (names("ux", 1), uxs, 1),
                    (vec!["v".into()], vs, 1),
                ],
            )
        }
        ModelId::Ar1 => {
            let rho = spec.rho.expect("validated");
            let xs = draws(&dist(&spec.xstar), n, &mut rng);
            let us = draws(&dist(&spec.u), n, &mut rng);
            let eta = draws(&dist(&spec.eta), n, &mut rng);
            let eta1 = draws(
                &dist(spec.eta1.as_ref().map_or(&spec.eta, |_| &spec.eta1)),
                n,
                &mut rng,
            );
            let ux: Vec<f64> = us.iter().zip(&eta).map(|(u, e)| rho * u + e).collect();
            let uy: Vec<f64> = ux.iter().zip(&eta1).map(|(u, e)| rho * u + e).collect();
            let s = Sample::new(
                1,
                add(&xs, &us),
                Some(add(&xs, &ux)),
                None,
                Some(add(&xs, &uy)),
            )?;
            (
                s,
                vec![
                    (names("xstar", 1), xs, 1),
                    (names("u", 1), us, 1),
                    (names("ux", 1), ux, 1),
                    (names("uy", 1), uy, 1),
                ],
            )
        }
        ModelId::Factor => {
            let a = spec.a_matrix.as_ref().expect("validated");
            let split = spec.a_split.expect("validated");
            let m = a.nrows();
            let xs = draws(&dist(&spec.xstar), nd, &mut rng);
            let (u1, u2) = (dist(&spec.u), dist(&spec.ux));
            let mut ut = Vec::with_capacity(n * m);
            let mut zt = Vec::with_capacity(n * m);
            for j in 0..n {
                for r in 0..m {
                    let e = if r < split {
                        u1.sample(&mut rng)
                    } else {
                        u2.sample(&mut rng)
                    };
                    let ax: f64 = (0..d).map(|c| a[(r, c)] * xs[j * d + c]).sum();
                    ut.push(e);
                    zt.push(ax + e);
                }
            }
            let s = Sample::new(m, zt, None, None, None)?;
            (s, vec![(names("xstar", d), xs, d), (names("ut", m), ut, m)])
        }
    };
    let truth_header: Vec<String> = cols.iter().flat_map(|c| c.0.clone()).collect();
    let truth = (0..n)
        .map(|j| {
            cols.iter()
                .flat_map(|(_, v, w)| v[j * w..(j + 1) * w].to_vec())
                .collect()
        })
        .collect();
    Ok(Generated {
        sample,
        truth_header,
        truth,
    })
}

/// Closed-form CF of a vector with independent components from `dist`.
pub fn true_cf(dist: &Dist, grid: &Grid) -> GridFn {
    product_cf(dist, grid)
}

/// `(max |φ̂ − φ|, Σ |φ̂ − φ|² · cell volume)` over the masked points.
pub fn metric_cf(est: &GridFn, truth: &GridFn, mask: &[bool]) -> (f64, f64) {
    let cell = est.grid().cell_volume();
    let mut sup: f64 = 0.0;
    let mut ise = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let e = (est.value(i) - truth.value(i)).norm();
            sup = sup.max(e);
            ise += e * e * cell;
        }
    }
    (sup, ise)
}

/// Cesàro estimate of the atom at `x0`: `(2T)^{-d} ∫_{[-T,T]^d} φ(s) e^{-is·x0} ds`
/// with `T = s_max` (the point `x0` is repeated on every axis). The trapezoid
/// rule is used; the lowest grid row has half weight and no mirror point.
pub fn mass_point_estimate(phi: &GridFn, x0: f64) -> f64 {
    let grid = phi.grid();
    let t = grid.extent();
    let half = -((grid.points_per_dim() / 2) as isize);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..grid.len() {
        let mut w = 1.0;
        let mut phase = 0.0;
        for a in 0..grid.dim() {
            if grid.offset(i, a) == half {
                w *= 0.5;
            }
            phase -= grid.coord(i, a) * x0;
        }
        acc += phi.value(i) * C64::from_polar(w, phase);
    }
    (acc * grid.cell_volume()).re / (2.0 * t).powi(grid.dim() as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffChoice {
    None,
    /// Lemma-2 rule with supersmooth order `k`.
    Lemma2(u32),
    Heuristic,
}

impl FromStr for CutoffChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(CutoffChoice::None),
            "heuristic" => Ok(CutoffChoice::Heuristic),
            other => match other.strip_prefix("lemma2:").map(|k| k.parse::<u32>()) {
                Some(Ok(k)) if k >= 1 => Ok(CutoffChoice::Lemma2(k)),
                _ => Err(format!(
                    "expected lemma2:<k>, heuristic or none, got `{other}`"
                )),
            },
        }
    }
}

impl fmt::Display for CutoffChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffChoice::None => write!(f, "none"),
            CutoffChoice::Lemma2(k) => write!(f, "lemma2:{k}"),
            CutoffChoice::Heuristic => write!(f, "heuristic"),
        }
    }
}

/// Parse `N:s_max`.
pub fn parse_grid(text: &str) -> Result<(usize, f64), String> {
    let (n, s) = text
        .split_once(':')
        .ok_or_else(|| format!("expected N:s_max, got `{text}`"))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| format!("bad point count `{n}`"))?;
    let s: f64 = s.trim().parse().map_err(|_| format!("bad extent `{s}`"))?;
    make_grids(1, n, s).map_err(|e| e.to_string())?;
    Ok((n, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub n_points: usize,
    pub s_max: f64,
    /// Overrides the spec's variant.
    pub variant: Option<Variant>,
    pub cutoff: CutoffChoice,
    pub safety: f64,
    /// Rate of the input estimator; `√n` when unset.
    pub r_n: Option<f64>,
    /// Kernel bandwidth for models 6, 7 and ar1; Silverman when unset.
    pub bandwidth: Option<f64>,
    /// Scores use `‖s‖ ≤ score_radius`; the whole grid when unset.
    pub score_radius: Option<f64>,
    pub mass_at: Option<f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            n_points: 1024,
            s_max: 20.0,
            variant: None,
            cutoff: CutoffChoice::None,
            safety: 0.9,
            r_n: None,
            bandwidth: None,
            score_radius: None,
            mass_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub cf_sup_error: f64,
    pub cf_ise: f64,
    pub density_ise_smoothed: f64,
    pub mass_point_estimate: Option<f64>,
    pub g_sup_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub spec: ModelSpec,
    pub n: usize,
    pub seed: Option<u64>,
    pub solution: ModelSolution,
    pub cutoff_radius: Option<f64>,
    pub smoothness: Option<crate::regularization::RegularityClass>,
    pub phi_class_value: Option<f64>,
    pub metrics: Option<Metrics>,
    pub runtime_ms: u128,
}

fn bandwidth_for(sample: &Sample, opts: &EstimateOptions) -> f64 {
    opts.bandwidth
        .unwrap_or_else(|| silverman_bandwidth(sample.z(), sample.dim()))
}

/// Estimate moments from `sample` and solve the model of `spec`.
/// Only the known error law (models 1, 2) is taken from `spec`.
pub fn estimate(
    spec: &ModelSpec,
    sample: &Sample,
    opts: &EstimateOptions,
) -> Result<EstimationReport, HarnessError> {
    let start = Instant::now();
    let variant = opts.variant.unwrap_or(spec.variant);
    let (fg, space) = make_grids(spec.d, opts.n_points, opts.s_max)?;
    let n = sample.len();
    let sigma = ecf_noise_scale(n, fg.len());
    let check_dim = |want: usize| {
        if sample.dim() != want {
            Err(HarnessError::Spec(format!(
                "sample has {} z columns, expected {want}",
                sample.dim()
            )))
        } else {
            Ok(())
        }
    };
    let known_u = spec.known_phi_u(&fg);
    if matches!(spec.model, ModelId::M1 | ModelId::M2) && known_u.is_none() {
        return Err(HarnessError::Spec(format!(
            "model {} needs the error law `u`",
            spec.model
        )));
    }
    let mut solution = match spec.model {
        ModelId::M1 => {
            check_dim(spec.d)?;
            let phi_z = ecf(sample.z(), &fg)?;
            solvers::solve_model1(
                &phi_z,
                known_u.as_ref().expect("model 1"),
                &SolveOptions::exact(),
            )?
        }
        ModelId::M2 => {
            check_dim(spec.d)?;
            let phi_z = ecf(sample.z(), &fg)?;
            solvers::solve_model2(&phi_z, known_u.as_ref().expect("model 2"))?
        }
        ModelId::M3 | ModelId::M4 | ModelId::M4a | ModelId::Factor => {
            let reduced;
            let s = if spec.model == ModelId::Factor {
                let a = spec.a_matrix.as_ref().expect("validated");
                check_dim(a.nrows())?;
                let r =
                    solvers::reduce_factor_model(a, spec.a_split.expect("validated"), sample.z())?;
                reduced = r.sample;
                &reduced
            } else {
                check_dim(spec.d)?;
                sample
            };
            let mut m = MomentFns::two_measurements(s, &fg)?;
            if spec.model == ModelId::M4a {
                m = m.with_difference(s, &fg)?;
            }
            let o = SolveOptions::for_moments(&m).with_variant(variant);
            match spec.model {
                ModelId::M4 => solvers::solve_model4(&m, &o)?,
                ModelId::M4a => solvers::solve_model4a(&m, &o)?,
                _ => solvers::solve_model3(&m, &o)?,
            }
        }
        ModelId::M5 => {
            check_dim(1)?;
            let m = MomentFns::regression(sample, &fg)?;
            solvers::solve_model5(&m, &SolveOptions::for_moments(&m).with_variant(variant))?
        }
        ModelId::M6 => {
            check_dim(1)?;
            let phi_z = ecf(sample.z(), &fg)?;
            let phi_x = ecf(sample.require_x()?, &fg)?;
            let w = conditional_mean_on_grid(
                sample.z(),
                sample.require_y()?,
                &space,
                bandwidth_for(sample, opts),
            )?;
            solvers::solve_model6(&phi_z, &phi_x, &w.values, &SolveOptions::estimated(sigma))?
        }
        ModelId::M7 => {
            check_dim(1)?;
            let m = MomentFns::berkson(sample, &fg, bandwidth_for(sample, opts))?;
            solvers::solve_model7(&m, &SolveOptions::for_moments(&m).with_variant(variant))?
        }
        ModelId::Ar1 => {
            check_dim(1)?;
            let m = MomentFns::two_measurements(sample, &fg)?;
            let r = solvers::rho_inputs(sample, &space, bandwidth_for(sample, opts))?;
            solvers::solve_ar1(&m, &r, &SolveOptions::for_moments(&m).with_variant(variant))?
        }
    };

    if solution.phi_u.is_none() {
        solution.phi_u = known_u.clone();
    }
    let (phi_u, floor) = match (&solution.phi_u, &known_u) {
        (_, Some(k)) => (Some(k.clone()), 0.0),
        (Some(u), None) => (Some(u.clone()), sigma),
        _ => (None, sigma),
    };
    let cutoff_radius = match opts.cutoff {
        CutoffChoice::None => None,
        CutoffChoice::Lemma2(k) => {
            let r_n = opts.r_n.unwrap_or((n as f64).sqrt());
            Some(lemma2_cutoff(r_n, k, opts.safety)?.b_bar)
        }
        CutoffChoice::Heuristic => {
            let u = phi_u
                .as_ref()
                .ok_or_else(|| HarnessError::Spec("heuristic cutoff needs an error CF".into()))?;
            Some(heuristic_cutoff(u, sigma))
        }
    };
    if let Some(r) = cutoff_radius {
        solution.phi_xstar = solution
            .phi_xstar
            .as_ref()
            .map(|p| apply_cutoff_radius(p, r));
        solution.ft_g = solution.ft_g.as_ref().map(|p| apply_cutoff_radius(p, r));
        let ball = SupportMask::ball(&fg, r);
        solution.identified_mask = solution
            .identified_mask
            .intersect(&ball)
            .map_err(|e| HarnessError::Numerical(e.to_string()))?;
        solution.diagnostics.insert("cutoff_radius".into(), r);
    }
    let smoothness = phi_u.as_ref().map(|u| classify_smoothness(u, floor));
    let phi_class_value = match &phi_u {
        Some(u) => {
            let inv = u.map(|v| {
                if v.norm() > 0.0 {
                    v.inv()
                } else {
                    C64::new(f64::INFINITY, 0.0)
                }
            });
            Some(check_phi_class(&inv, &vec![0; spec.d], 1e6)?.value)
        }
        None => None,
    };
    let metrics = score(spec, &solution, &fg, opts)?;
    Ok(EstimationReport {
        spec: spec.clone(),
        n,
        seed: None,
        solution,
        cutoff_radius,
        smoothness,
        phi_class_value,
        metrics,
        runtime_ms: start.elapsed().as_millis(),
    })
}

/// Compare the recovered CF (and `g`) with the closed forms of `spec`.
pub fn score(
    spec: &ModelSpec,
    sol: &ModelSolution,
    grid: &Grid,
    opts: &EstimateOptions,
) -> Result<Option<Metrics>, HarnessError> {
    let Some((name, truth)) = spec.truth_cf(grid) else {
        return Ok(None);
    };
    let est = match name {
        "phi_u" => sol.phi_u.as_ref(),
        _ => sol.phi_xstar.as_ref(),
    };
    let Some(est) = est else {
        return Ok(None);
    };
    let radius = opts.score_radius.unwrap_or(f64::INFINITY);
    let mask: Vec<bool> = (0..grid.len()).map(|i| grid.norm(i) <= radius).collect();
    let (sup, ise) = metric_cf(est, &truth, &mask);
    let f_est = inverse_transform(est)?;
    let f_true = inverse_transform(&truth)?;
    let dens = (0..f_est.grid().len())
        .map(|i| (f_est.value(i) - f_true.value(i)).norm_sqr())
        .sum::<f64>()
        * f_est.grid().cell_volume();
    let g_sup_error = match (
        &spec.g,
        &sol.g_hat,
        matches!(spec.model, ModelId::M5 | ModelId::M6 | ModelId::M7),
    ) {
        (Some(g), Some(gh), true) => {
            let sg = gh.grid();
            let gm = sol.g_mask.clone().unwrap_or_else(|| vec![true; sg.len()]);
            Some(
                (0..sg.len())
                    .filter(|&i| gm[i] && sg.coord(i, 0).abs() <= 2.0)
                    .map(|i| (gh.value(i).re - g.eval(sg.coord(i, 0))).abs())
                    .fold(0.0, f64::max),
            )
        }
        _ => None,
    };
    Ok(Some(Metrics {
        cf_sup_error: sup,
        cf_ise: ise,
        density_ise_smoothed: dens,
        mass_point_estimate: opts.mass_at.map(|x0| mass_point_estimate(est, x0)),
        g_sup_error,
    }))
}

impl EstimationReport {
    /// `key: value` lines for the report file.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("model".into(), self.spec.model.to_string()),
            ("variant".into(), format!("{:?}", self.spec.variant)),
            ("d".into(), self.spec.d.to_string()),
            ("n".into(), self.n.to_string()),
        ];
        if let Some(s) = self.seed {
            e.push(("seed".into(), s.to_string()));
        }
        if self.solution.phi_u.is_some() {
            let src = if matches!(self.spec.model, ModelId::M1 | ModelId::M2) {
                "known"
            } else {
                "estimated"
            };
            e.push(("phi_u_source".into(), src.into()));
        }
        if let Some(c) = &self.smoothness {
            e.push(("smoothness_kind".into(), c.kind.name().into()));
            e.push(("p_or_k".into(), c.kind.parameter().to_string()));
        }
        if let Some(v) = self.phi_class_value {
            e.push(("phi_class_value".into(), v.to_string()));
        }
        e.push((
            "cutoff_radius".into(),
            self.cutoff_radius.map_or("none".into(), |r| r.to_string()),
        ));
        if let Some(r) = self.solution.rho_hat {
            e.push(("rho_hat".into(), r.to_string()));
        }
        e.push((
            "identified_points".into(),
            self.solution.identified_mask.count().to_string(),
        ));
        for (k, v) in &self.solution.diagnostics {
            if k != "cutoff_radius" && k != "rho_hat" {
                e.push((k.clone(), v.to_string()));
            }
        }
        if let Some(m) = &self.metrics {
            e.push(("cf_sup_error".into(), m.cf_sup_error.to_string()));
            e.push(("cf_ise".into(), m.cf_ise.to_string()));
            e.push((
                "density_ise_smoothed".into(),
                m.density_ise_smoothed.to_string(),
            ));
            if let Some(v) = m.mass_point_estimate {
                e.push(("mass_point_estimate".into(), v.to_string()));
            }
            if let Some(v) = m.g_sup_error {
                e.push(("g_sup_error".into(), v.to_string()));
            }
        }
        e.push(("runtime_ms".into(), self.runtime_ms.to_string()));
        e
    }

    /// Write the recovered functions, the identified mask and `report.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files = Vec::new();
        let sol = &self.solution;
        let density = sol.density_xstar();
        let named: [(&str, Option<&GridFn>); 6] = [
            ("phi_xstar", sol.phi_xstar.as_ref()),
            ("phi_u", sol.phi_u.as_ref()),
            ("phi_ux", sol.phi_ux.as_ref()),
            ("ft_g", sol.ft_g.as_ref()),
            ("g_hat", sol.g_hat.as_ref()),
            ("density_xstar", density.as_ref()),
        ];
        for (name, f) in named {
            if let Some(f) = f {
                let p = dir.join(format!("{name}.csv"));
                io::write_gridfn(&p, f)?;
                files.push(p);
            }
        }
        let p = dir.join("mask.csv");
        io::write_mask(&p, &sol.identified_mask)?;
        files.push(p);
        let p = dir.join("report.txt");
        let mut entries = self.entries();
        let names: Vec<String> = files
            .iter()
            .filter_map(|f| f.file_name())
            .map(|f| f.to_string_lossy().into_owned())
            .collect();
        entries.push(("files".into(), names.join(",")));
        io::write_report(&p, &entries)?;
        files.push(p);
        Ok(files)
    }
}

/// Write `sample.csv`, `truth.csv`, `spec.txt` and `run.txt` into `dir`.
pub fn write_simulation(
    dir: &Path,
    spec: &ModelSpec,
    g: &Generated,
    n: usize,
    seed: u64,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    io::write_sample(&dir.join("sample.csv"), &g.sample)?;
    io::write_table(&dir.join("truth.csv"), &g.truth_header, &g.truth)?;
    let spec_path = dir.join("spec.txt");
    std::fs::write(&spec_path, spec.to_text()).map_err(|source| IoError::Io {
        path: spec_path,
        source,
    })?;
    io::write_report(
        &dir.join("run.txt"),
        &[
            ("model".into(), spec.model.to_string()),
            ("n".into(), n.to_string()),
            ("seed".into(), seed.to_string()),
        ],
    )?;
    Ok(())
}

/// A replication sweep read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub spec: ModelSpec,
    pub ns: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimate: EstimateOptions,
    pub out: PathBuf,
}

/// Keys of a sweep config besides the [`SPEC_KEYS`].
pub const SWEEP_KEYS: &[&str] = &[
    "n",
    "replications",
    "seed",
    "grid",
    "cutoff",
    "safety",
    "r_n",
    "bandwidth",
    "score_radius",
    "mass_at",
    "out",
];

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let lines = parse_kv(text)?;
        let (spec, rest) = ModelSpec::from_lines(&lines, None)?;
        let mut cfg = SweepConfig {
            spec,
            ns: Vec::new(),
            replications: 1,
            seed: 0,
            estimate: EstimateOptions::default(),
            out: PathBuf::from("sweep_out"),
        };
        let mut have_n = false;
        for l in &rest {
            let e = |msg: &str| HarnessError::config(l.line, format!("{}: {msg}", l.key));
            let pos = |v: &str| v.parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite());
            match l.key.as_str() {
                "n" => {
                    have_n = true;
                    cfg.ns = l
                        .value
                        .split(',')
                        .filter(|t| !t.trim().is_empty())
                        .map(|t| t.trim().parse::<usize>().ok().filter(|&n| n >= 2))
                        .collect::<Option<_>>()
                        .ok_or_else(|| e("expected a comma-separated list of integers >= 2"))?;
                }
                "replications" => {
                    cfg.replications = l.value.parse().map_err(|_| e("expected an integer"))?
                }
                "seed" => {
                    cfg.seed = l
                        .value
                        .parse()
                        .map_err(|_| e("expected an unsigned integer"))?
                }
                "grid" => {
                    let (n, s) = parse_grid(&l.value).map_err(|m| e(&m))?;
                    cfg.estimate.n_points = n;
                    cfg.estimate.s_max = s;
                }
                "cutoff" => cfg.estimate.cutoff = l.value.parse().map_err(|m: String| e(&m))?,
                "safety" => {
                    cfg.estimate.safety = l
                        .value
                        .parse()
                        .ok()
                        .filter(|s: &f64| *s > 0.0 && *s < 1.0)
                        .ok_or_else(|| e("expected a number in (0,1)"))?
                }
                "r_n" => {
                    cfg.estimate.r_n = match l.value.as_str() {
                        "sqrt" => None,
                        v => Some(
                            pos(v)
                                .filter(|r| *r > 1.0)
                                .ok_or_else(|| e("expected `sqrt` or a number > 1"))?,
                        ),
                    }
                }
                "bandwidth" => {
                    cfg.estimate.bandwidth =
                        Some(pos(&l.value).ok_or_else(|| e("expected a positive number"))?)
                }
                "score_radius" => {
                    cfg.estimate.score_radius =
                        Some(pos(&l.value).ok_or_else(|| e("expected a positive number"))?)
                }
                "mass_at" => {
                    cfg.estimate.mass_at = Some(
                        l.value
                            .parse()
                            .ok()
                            .filter(|v: &f64| v.is_finite())
                            .ok_or_else(|| e("expected a number"))?,
                    )
                }
                "out" => cfg.out = PathBuf::from(&l.value),
                _ => {
                    return Err(HarnessError::config(
                        l.line,
                        format!("unknown key `{}`", l.key),
                    ))
                }
            }
        }
        if !have_n {
            return Err(HarnessError::Config {
                line: None,
                msg: "missing key `n`".into(),
            });
        }
        Ok(cfg)
    }
}

/// One replication of a sweep; metrics are NaN when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    /// 0 on success, otherwise the exit code of the failure.
    pub status: i32,
    pub cf_sup_error: f64,
    pub cf_ise: f64,
    pub density_ise_smoothed: f64,
    pub mass_point_estimate: f64,
    pub g_sup_error: f64,
    pub rho_hat: f64,
    pub cutoff_radius: f64,
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "n",
    "replication",
    "seed",
    "status",
    "cf_sup_error",
    "cf_ise",
    "density_ise_smoothed",
    "mass_point_estimate",
    "g_sup_error",
    "rho_hat",
    "cutoff_radius",
];

impl SweepRow {
    fn values(&self) -> Vec<f64> {
        vec![
            self.n as f64,
            self.replication as f64,
            self.seed as f64,
            self.status as f64,
            self.cf_sup_error,
            self.cf_ise,
            self.density_ise_smoothed,
            self.mass_point_estimate,
            self.g_sup_error,
            self.rho_hat,
            self.cutoff_radius,
        ]
    }
}

/// Generate, estimate and score one replication.
pub fn run_replication(cfg: &SweepConfig, n: usize, replication: usize) -> SweepRow {
    let seed = cfg.seed.wrapping_add(replication as u64);
    let mut row = SweepRow {
        n,
        replication,
        seed,
        status: 0,
        cf_sup_error: f64::NAN,
        cf_ise: f64::NAN,
        density_ise_smoothed: f64::NAN,
        mass_point_estimate: f64::NAN,
        g_sup_error: f64::NAN,
        rho_hat: f64::NAN,
        cutoff_radius: f64::NAN,
    };
    let result =
        generate(&cfg.spec, n, seed).and_then(|g| estimate(&cfg.spec, &g.sample, &cfg.estimate));
    match result {
        Ok(rep) => {
            if let Some(m) = rep.metrics {
                row.cf_sup_error = m.cf_sup_error;
                row.cf_ise = m.cf_ise;
                row.density_ise_smoothed = m.density_ise_smoothed;
                row.mass_point_estimate = m.mass_point_estimate.unwrap_or(f64::NAN);
                row.g_sup_error = m.g_sup_error.unwrap_or(f64::NAN);
            }
            row.rho_hat = rep.solution.rho_hat.unwrap_or(f64::NAN);
            row.cutoff_radius = rep.cutoff_radius.unwrap_or(f64::NAN);
        }
        Err(e) => row.status = e.exit_code(),
    }
    row
}

/// Run every `(n, replication)` pair on a pool of `jobs` threads. Rows come
/// back in `(n, replication)` order and do not depend on `jobs`.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize) -> Result<Vec<SweepRow>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let tasks: Vec<(usize, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, r)| run_replication(cfg, n, r))
            .collect()
    }))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-`n` medians of a metric over successful replications.
pub fn medians_by_n(
    rows: &[SweepRow],
    ns: &[usize],
    metric: impl Fn(&SweepRow) -> f64,
) -> Vec<f64> {
    ns.iter()
        .map(|&n| {
            median(
                rows.iter()
                    .filter(|r| r.n == n && r.status == 0)
                    .map(&metric)
                    .collect(),
            )
        })
        .collect()
}

/// Write `metrics.csv` (one row per replication) and `summary.csv`
/// (medians per `n`) into `cfg.out`.
pub fn write_sweep(cfg: &SweepConfig, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.clone(),
        source,
    })?;
    let header: Vec<String> = SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect();
    let table: Vec<Vec<f64>> = rows.iter().map(SweepRow::values).collect();
    io::write_table(&dir.join("metrics.csv"), &header, &table)?;
    let cols: [(&str, fn(&SweepRow) -> f64); 6] = [
        ("median_cf_sup_error", |r| r.cf_sup_error),
        ("median_cf_ise", |r| r.cf_ise),
        ("median_density_ise_smoothed", |r| r.density_ise_smoothed),
        ("median_mass_point_estimate", |r| r.mass_point_estimate),
        ("median_g_sup_error", |r| r.g_sup_error),
        ("median_rho_hat", |r| r.rho_hat),
    ];
    let mut header = vec!["n".to_string(), "succeeded".to_string()];
    header.extend(cols.iter().map(|c| c.0.to_string()));
    let meds: Vec<Vec<f64>> = cols
        .iter()
        .map(|(_, f)| medians_by_n(rows, &cfg.ns, f))
        .collect();
    let summary: Vec<Vec<f64>> = cfg
        .ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let ok = rows.iter().filter(|r| r.n == n && r.status == 0).count();
            let mut r = vec![n as f64, ok as f64];
            r.extend(meds.iter().map(|m| m[j]));
            r
        })
        .collect();
    io::write_table(&dir.join("summary.csv"), &header, &summary)?;
    Ok(())
}

/// Parse a config file, run the sweep and write its CSVs.
pub fn run_experiment(
    config: &Path,
    jobs: usize,
) -> Result<(SweepConfig, Vec<SweepRow>), HarnessError> {
    let text = std::fs::read_to_string(config).map_err(|source| IoError::Io {
        path: config.to_path_buf(),
        source,
    })?;
    let cfg = SweepConfig::parse(&text)?;
    let rows = run_sweep(&cfg, jobs)?;
    write_sweep(&cfg, &rows)?;
    Ok((cfg, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec(text: &str) -> ModelSpec {
        ModelSpec::parse(text, None).unwrap()
    }

    #[test]
    fn kv_errors_carry_line_numbers() {
        let e = parse_kv("# c\nmodel=1\n\nbogus line\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: Some(4), .. }));
        let e = parse_kv("a=1\na=2\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: Some(2), .. }));
        let e = ModelSpec::parse(
            "model=1\nxstar=gaussian(0,1)\nu=laplace(1)\ncolour=red\n",
            None,
        )
        .unwrap_err();
        assert!(
            matches!(e, HarnessError::Config { line: Some(4), .. }),
            "{e}"
        );
        let e =
            ModelSpec::parse("model=1\nxstar=gaussian(0,-1)\nu=laplace(1)\n", None).unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: Some(2), .. }));
        assert_eq!(e.exit_code(), 2);
        let e = ModelSpec::parse("model=3\nxstar=gaussian(0,1)\nu=laplace(1)\n", None).unwrap_err();
        assert!(matches!(e, HarnessError::Spec(_)));
    }

    #[test]
    fn spec_text_round_trip() {
        let s = spec("model=factor\nd=2\nxstar=gaussian(0,1)\nu=laplace(0.5)\nux=uniform(-1,1)\na_matrix=1,0;0,1;1,1;2,1\na_split=2\n");
        assert_eq!(ModelSpec::parse(&s.to_text(), None).unwrap(), s);
        let s = spec(
            "model=ar1\nxstar=gaussian(0,1)\nu=gaussian(0,1)\neta=gaussian(0,0.5)\nrho=0.5\n# c\n",
        );
        assert_eq!(ModelSpec::parse(&s.to_text(), None).unwrap(), s);
    }

    #[test]
    fn generate_is_deterministic_and_degenerate_error_passes_through() {
        let s = spec("model=1\nxstar=gaussian(0,1)\nu=point(0)\n");
        let a = generate(&s, 500, 7).unwrap();
        let b = generate(&s, 500, 7).unwrap();
        assert_eq!(a.sample, b.sample);
        for (j, row) in a.truth.iter().enumerate() {
            assert_eq!(a.sample.z()[j], row[0]);
        }
        assert_ne!(generate(&s, 500, 8).unwrap().sample, a.sample);
    }

    #[test]
    fn ar1_error_moments() {
        let s =
            spec("model=ar1\nxstar=gaussian(0,1)\nu=gaussian(0,1)\neta=gaussian(0,0.5)\nrho=0.5\n");
        let n = 100_000;
        let g = generate(&s, n, 3).unwrap();
        let col = |name: &str| g.truth_header.iter().position(|h| h == name).unwrap();
        let (iu, iux) = (col("u1"), col("ux1"));
        let cov = g.truth.iter().map(|r| r[iu] * r[iux]).sum::<f64>() / n as f64;
        // E u_x u = ρ Var u; sd of the product is about sqrt(Var(u·u_x)) / sqrt(n)
        let var_prod = g
            .truth
            .iter()
            .map(|r| (r[iu] * r[iux] - 0.5).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(
            (cov - 0.5).abs() < 5.0 * (var_prod / n as f64).sqrt(),
            "cov {cov}"
        );
    }

    #[test]
    fn generate_moment_checks() {
        let s = spec("model=4\nd=2\nxstar=gaussian(1,1)\nu=laplace(0.5)\nux=uniform(-1,1)\n");
        let n = 50_000;
        let g = generate(&s, n, 11).unwrap();
        for (k, name) in g.truth_header.iter().enumerate() {
            let dist = match &name[..name.len() - 1] {
                "xstar" => s.xstar.clone().unwrap(),
                "u" => s.u.clone().unwrap(),
                _ => s.ux.clone().unwrap(),
            };
            let (m, v) = dist.moments().unwrap();
            let mean = g.truth.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            assert!(
                (mean - m).abs() < 5.0 * v.sqrt() / (n as f64).sqrt(),
                "{name}"
            );
        }
    }

    #[test]
    fn true_cf_examples() {
        let (fg, _) = make_grids(1, 64, 8.0).unwrap();
        let u = true_cf(&"uniform(-1,1)".parse().unwrap(), &fg);
        assert_eq!(u.at_origin(), C64::new(1.0, 0.0));
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            if s != 0.0 {
                assert!((u.value(i).re - s.sin() / s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metric_cf_examples() {
        let (fg, _) = make_grids(1, 64, 8.0).unwrap();
        let f = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0]).exp());
        let all = vec![true; fg.len()];
        assert_eq!(metric_cf(&f, &f, &all), (0.0, 0.0));
        let c = 0.25;
        let g = f.map(|v| v + c);
        let mask: Vec<bool> = (0..fg.len()).map(|i| fg.coord(i, 0).abs() <= 2.0).collect();
        let measure = mask.iter().filter(|&&m| m).count() as f64 * fg.step();
        let (sup, ise) = metric_cf(&g, &f, &mask);
        assert!((sup - c).abs() < 1e-15);
        assert!((ise - c * c * measure).abs() < 1e-12);
    }

    #[test]
    fn mass_point_estimates() {
        let (fg, _) = make_grids(1, 1024, 20.0).unwrap();
        let one = GridFn::constant(&fg, C64::new(1.0, 0.0));
        let e = mass_point_estimate(&one, 0.0);
        // trapezoid over [-T, T - Δs] with a half weight at -T
        let expect = 1.0 - 0.5 * fg.step() / 40.0;
        assert!((e - expect).abs() < 1e-12);
        // Gaussian: (2T)^{-1} ∫ e^{-s²/2} ds = √(2π) erf(T/√2) / (2T)
        let g = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 2.0).exp());
        let oracle = (2.0 * PI).sqrt() / 40.0;
        assert!((mass_point_estimate(&g, 0.0) - oracle).abs() < 1e-10);
        let mix = g.map(|v| v * 0.7 + 0.3);
        let oracle_mix = 0.3 * expect + 0.7 * oracle;
        assert!((mass_point_estimate(&mix, 0.0) - oracle_mix).abs() < 1e-10);
        // linearity
        let a = mass_point_estimate(&g, 0.4);
        let b = mass_point_estimate(&one, 0.4);
        let lin = mass_point_estimate(&g.map(|v| v * 2.0 + 3.0), 0.4);
        assert!((lin - (2.0 * a + 3.0 * b)).abs() < 1e-12);
    }

    #[test]
    fn sweep_config_parsing() {
        let cfg = SweepConfig::parse(
            "model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\nn=100,1000\nreplications=3\nseed=5\ngrid=256:10\ncutoff=lemma2:2\nout=/tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.ns, vec![100, 1000]);
        assert_eq!(cfg.estimate.cutoff, CutoffChoice::Lemma2(2));
        assert_eq!(cfg.estimate.n_points, 256);
        let e =
            SweepConfig::parse("model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\nn=100\nspeed=3\n")
                .unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: Some(5), .. }));
        let e =
            SweepConfig::parse("model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\nn=100\ngrid=7:3\n")
                .unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: Some(5), .. }));
        assert!(SweepConfig::parse("model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\n").is_err());
    }

    #[test]
    fn empty_sweep_gives_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SweepConfig::parse(
            "model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\nn=100\nreplications=0\n",
        )
        .unwrap();
        cfg.out = dir.path().to_path_buf();
        let rows = run_sweep(&cfg, 2).unwrap();
        assert!(rows.is_empty());
        write_sweep(&cfg, &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn model1_pipeline_scores() {
        let s = spec("model=1\nxstar=gaussian(0,1)\nu=laplace(0.5)\n");
        let g = generate(&s, 20_000, 1).unwrap();
        let opts = EstimateOptions {
            n_points: 256,
            s_max: 10.0,
            score_radius: Some(3.0),
            ..Default::default()
        };
        let rep = estimate(&s, &g.sample, &opts).unwrap();
        let m = rep.metrics.unwrap();
        assert!(m.cf_sup_error < 0.05, "{m:?}");
        assert_eq!(rep.smoothness.unwrap().kind.name(), "ordinary_smooth");
        assert!(rep.solution.diagnostics["reconstruction_residual"] < 1e-10);
    }
}
