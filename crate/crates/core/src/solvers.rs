//! Solutions of the frequency-domain systems for models 1–7, the AR(1)
//! error extension, the common-factor reduction and partial identification.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::{forward_transform, inverse_transform, Grid, GridError, GridFn, C64};
use crate::kappa::{kappa_field_with_core, path_exponential_with, KappaField, PathOptions};
use crate::moments::{MomentFns, MomentsError, Sample};
use crate::support::{
    detect_support, fit_zero_with_tolerance, polyfit_eval, polyfit_integral, safe_divide,
    SupportError, SupportMask, ZeroFit, DEFAULT_MAX_ORDER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("the support does not contain the origin")]
    EmptyZeroComponent,
    #[error("curl residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    CurlGate { residual: f64, tolerance: f64 },
    #[error("spatial density mask is empty")]
    EmptySpatialMask,
    #[error("denominator below threshold on the whole window")]
    DenominatorTooSmall,
    #[error("estimated rho {0} is too close to 1")]
    RhoNearOne(f64),
    #[error("block A{block} has rank {rank}, need {needed}")]
    RankDeficient {
        block: usize,
        rank: usize,
        needed: usize,
    },
    #[error("bad factor model: {0}")]
    BadFactor(String),
}

/// Which factor of a two-equation system is obtained by path integration.
///
/// With `γ = αβ` and `γ_k = α·β'_k`:
/// `B` integrates `κ_k = γ_k/γ` to get `β`; `A` integrates
/// `κ_k = (γ'_k − γ_k)/γ` to get `α`. The other factor follows by division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    A,
    #[default]
    B,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            other => Err(format!("unknown variant '{other}', expected A or B")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Support threshold for the known function being divided by.
    pub tau: f64,
    /// Absolute vanishing tolerance for zero fits; `None` uses `1e-8·sup`.
    pub zero_tolerance: Option<f64>,
    pub max_order: usize,
    pub curl_tolerance: Option<f64>,
    /// The curl is measured only where `|γ| ≥ curl_core`.
    pub curl_core: f64,
    pub variant: Variant,
    /// Exchange the two factors of model 3 type systems on output.
    pub swap_labels: bool,
    /// Continue the integrated factor across finite-order zeros (`d = 1`).
    pub cross_zeros: bool,
    /// User-supplied values of the integrated factor, `(grid index, value)`,
    /// anchoring components that do not contain the origin.
    pub anchors: Vec<(usize, C64)>,
    /// Relative floor of the spatial density mask in model 5.
    pub spatial_floor: f64,
}

impl SolveOptions {
    /// Defaults for analytically supplied inputs.
    pub fn exact() -> Self {
        SolveOptions {
            tau: 1e-10,
            zero_tolerance: None,
            max_order: DEFAULT_MAX_ORDER,
            curl_tolerance: Some(crate::kappa::EXACT_CURL_TOLERANCE),
            curl_core: 0.0,
            variant: Variant::B,
            swap_labels: false,
            cross_zeros: true,
            anchors: Vec::new(),
            spatial_floor: 1e-3,
        }
    }

    /// Defaults for inputs estimated with ECF noise scale `sigma`.
    pub fn estimated(sigma: f64) -> Self {
        SolveOptions {
            tau: 3.0 * sigma,
            zero_tolerance: Some(3.0 * sigma),
            curl_tolerance: Some(10.0 * sigma),
            curl_core: 30.0 * sigma,
            cross_zeros: false,
            ..Self::exact()
        }
    }

    /// Options matching the provenance of `moments`.
    pub fn for_moments(moments: &MomentFns) -> Self {
        match moments.noise_scale() {
            Some(s) => Self::estimated(s),
            None => Self::exact(),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self::exact()
    }
}

/// Recovered functions of one model.
#[derive(Debug, Clone)]
pub struct ModelSolution {
    pub phi_xstar: Option<GridFn>,
    pub phi_u: Option<GridFn>,
    pub phi_ux: Option<GridFn>,
    /// `Ft(g)` (models 6, 7) or `Ft(g f_x*)` (model 5).
    pub ft_g: Option<GridFn>,
    /// Regression function on the space grid.
    pub g_hat: Option<GridFn>,
    /// Space-grid nodes where `g_hat` is defined.
    pub g_mask: Option<Vec<bool>>,
    pub rho_hat: Option<f64>,
    pub identified_mask: SupportMask,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ModelSolution {
    fn new(identified_mask: SupportMask) -> Self {
        ModelSolution {
            phi_xstar: None,
            phi_u: None,
            phi_ux: None,
            ft_g: None,
            g_hat: None,
            g_mask: None,
            rho_hat: None,
            identified_mask,
            diagnostics: BTreeMap::new(),
        }
    }

    fn diag(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    /// Density of `x*` on the space grid, when `φ_x*` was recovered.
    pub fn density_xstar(&self) -> Option<GridFn> {
        self.phi_xstar
            .as_ref()
            .and_then(|p| inverse_transform(p).ok())
    }
}

/// `max |a·b − γ| / max |γ|` over the mask.
pub fn reconstruction_residual(a: &GridFn, b: &GridFn, gamma: &GridFn, mask: &SupportMask) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..gamma.grid().len() {
        if mask.contains(i) {
            worst = worst.max((a.value(i) * b.value(i) - gamma.value(i)).norm());
            scale = scale.max(gamma.value(i).norm());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

fn require<'a, T>(v: &'a Option<T>, what: &'static str) -> Result<&'a T, SolveError> {
    v.as_ref().ok_or(SolveError::MissingInput(what))
}

fn zero_fit(f: &GridFn, index: usize, opts: &SolveOptions) -> Result<ZeroFit, SupportError> {
    let tol = opts.zero_tolerance.unwrap_or(1e-8 * f.sup_norm());
    fit_zero_with_tolerance(f, index, opts.max_order, tol)
}

/// Off-mask runs `[lo, hi]` of a 1-d mask with mask points on both sides.
fn interior_gaps(mask: &SupportMask) -> Vec<(usize, usize)> {
    let n = mask.grid().len();
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < n {
        if mask.contains(i) {
            i += 1;
            continue;
        }
        let lo = i;
        while i < n && !mask.contains(i) {
            i += 1;
        }
        if lo > 0 && i < n {
            gaps.push((lo, i - 1));
        }
    }
    gaps
}

fn argmin_norm(f: &GridFn, lo: usize, hi: usize) -> usize {
    (lo..=hi)
        .min_by(|&a, &b| f.value(a).norm().total_cmp(&f.value(b).norm()))
        .expect("non-empty range")
}

/// Points used on each side when bridging a gap by interpolation.
const BRIDGE_POINTS: usize = 4;
const BRIDGE_MARGIN: usize = 2;

/// Fill `values` on `[lo, hi]` by a cubic least-squares fit through points
/// on both sides of the gap. Returns false when either side is too short.
fn bridge_gap(values: &mut [C64], mask: &SupportMask, lo: usize, hi: usize) -> bool {
    let grid = mask.grid();
    let left: Vec<usize> = (0..lo)
        .rev()
        .take_while(|&j| mask.contains(j))
        .skip(BRIDGE_MARGIN)
        .take(BRIDGE_POINTS)
        .collect();
    let right: Vec<usize> = (hi + 1..grid.len())
        .take_while(|&j| mask.contains(j))
        .skip(BRIDGE_MARGIN)
        .take(BRIDGE_POINTS)
        .collect();
    if left.len() < BRIDGE_POINTS || right.len() < BRIDGE_POINTS {
        return false;
    }
    let centre = 0.5 * (grid.coord(lo, 0) + grid.coord(hi, 0));
    let scale = (grid.coord(right[BRIDGE_POINTS - 1], 0) - centre).max(grid.step());
    let pts: Vec<usize> = left.into_iter().chain(right).collect();
    let t: Vec<f64> = pts
        .iter()
        .map(|&j| (grid.coord(j, 0) - centre) / scale)
        .collect();
    let v: Vec<C64> = pts.iter().map(|&j| values[j]).collect();
    let at: Vec<f64> = (lo..=hi)
        .map(|j| (grid.coord(j, 0) - centre) / scale)
        .collect();
    for (j, val) in (lo..=hi).zip(polyfit_eval(&t, &v, 3, &at)) {
        values[j] = val;
    }
    true
}

/// Model 1: `φ_x* = φ_z / φ_u` on the support of `φ_u`. In one dimension,
/// isolated finite-order zeros of `φ_u` are bridged by interpolating the
/// ratio across them and counted as identified.
pub fn solve_model1(
    phi_z: &GridFn,
    phi_u: &GridFn,
    opts: &SolveOptions,
) -> Result<ModelSolution, SolveError> {
    let mask = detect_support(phi_u, opts.tau)?;
    let div = safe_divide(phi_z, phi_u, &mask)?;
    let mut values = div.value.values().to_vec();
    let mut bits = mask.mask().to_vec();
    let mut bridged = 0usize;
    if phi_u.grid().dim() == 1 && opts.cross_zeros {
        for (lo, hi) in interior_gaps(&mask) {
            let at = argmin_norm(phi_u, lo, hi);
            if zero_fit(phi_u, at, opts).is_ok() && bridge_gap(&mut values, &mask, lo, hi) {
                bits[lo..=hi].iter_mut().for_each(|b| *b = true);
                bridged += 1;
            }
        }
    }
    let identified = SupportMask::from_mask(mask.grid(), bits)?;
    let phi_x = div.value.with_values(values).refresh_hermitian();
    let mut sol = ModelSolution::new(identified);
    sol.diag(
        "reconstruction_residual",
        reconstruction_residual(&phi_x, phi_u, phi_z, &mask),
    );
    sol.diag("bridged_zeros", bridged as f64);
    sol.diag("components", mask.components().len() as f64);
    sol.phi_xstar = Some(phi_x);
    Ok(sol)
}

/// Model 2: `φ_x* = φ_z · φ_{-u}` with `φ_{-u} = conj φ_u`.
pub fn solve_model2(phi_z: &GridFn, phi_u: &GridFn) -> Result<ModelSolution, SolveError> {
    let phi_minus_u = phi_u.conj();
    let phi_x = phi_z.mul(&phi_minus_u)?;
    let mut sol = ModelSolution::new(SupportMask::full(phi_z.grid()));
    sol.diag("reconstruction_residual", 0.0);
    sol.phi_xstar = Some(phi_x);
    sol.phi_u = Some(phi_u.clone());
    Ok(sol)
}

/// Factors of `γ = αβ`, `γ_k = α β'_k`, on the identified mask.
#[derive(Debug, Clone)]
pub struct Factors {
    pub beta: GridFn,
    pub alpha: GridFn,
    pub identified: SupportMask,
    pub support: SupportMask,
    pub curl_residual: f64,
    pub unidentified_components: usize,
    pub crossings: usize,
}

/// Solve the generic two-equation system. `dgamma_k` (the partial
/// derivatives of `γ`) is needed for [`Variant::A`]. `beta_at_origin` is
/// `β(0)`; `α(0) = 1` is assumed.
pub fn solve_two_equation(
    gamma: &GridFn,
    gamma_k: &[GridFn],
    dgamma_k: Option<&[GridFn]>,
    opts: &SolveOptions,
) -> Result<Factors, SolveError> {
    let grid = gamma.grid();
    let support = detect_support(gamma, opts.tau)?;
    let zero = support
        .zero_component()
        .ok_or(SolveError::EmptyZeroComponent)?;
    let numerators: Vec<GridFn> = match opts.variant {
        Variant::B => gamma_k.to_vec(),
        Variant::A => {
            let d = dgamma_k.ok_or(SolveError::MissingInput(
                "derivatives of the known function (variant A)",
            ))?;
            d.iter()
                .zip(gamma_k)
                .map(|(a, b)| a.sub(b))
                .collect::<Result<_, _>>()?
        }
    };
    let mut field = kappa_field_with_core(&numerators, gamma, &support, opts.curl_core)?;
    let anchor0 = match opts.variant {
        Variant::B => gamma.at_origin(),
        Variant::A => C64::new(1.0, 0.0),
    };
    let path = PathOptions {
        axis_order: None,
        curl_tolerance: opts.curl_tolerance,
    };
    let mut f = path_exponential_with(&field, zero, anchor0, &path)?.into_values();
    let mut solved = vec![false; support.components().len()];
    solved[zero] = true;
    let mut crossings = 0;

    for c in 0..support.components().len() {
        if c == zero {
            continue;
        }
        let members = support.components()[c].members.clone();
        let user = opts
            .anchors
            .iter()
            .find(|(i, _)| members.binary_search(i).is_ok())
            .copied();
        let anchor = match user {
            Some((i, v)) => Some((i, v)),
            None if grid.dim() == 1 && opts.cross_zeros => {
                let known = gamma.with_values(f.clone());
                cross_from_origin_side(gamma, &known, &field, &solved, c, opts)
            }
            None => None,
        };
        if let Some((i, v)) = anchor {
            field.domain.set_anchor(c, i, Some(v))?;
            let part = path_exponential_with(&field, c, v, &path)?;
            for &m in &members {
                f[m] = part.value(m);
            }
            solved[c] = true;
            if user.is_none() {
                crossings += 1;
            }
        }
    }
    let identified = support.restrict(|i| support.label(i).is_some_and(|l| solved[l]))?;
    for (i, v) in f.iter_mut().enumerate() {
        if !identified.contains(i) {
            *v = C64::new(0.0, 0.0);
        }
    }
    let integrated = gamma.with_values(f).refresh_hermitian();
    let other = safe_divide(gamma, &integrated, &identified)?.value;
    let (beta, alpha) = match opts.variant {
        Variant::B => (integrated, other),
        Variant::A => (other, integrated),
    };
    Ok(Factors {
        beta,
        alpha,
        identified,
        curl_residual: field.curl_residual,
        unidentified_components: solved.iter().filter(|s| !**s).count(),
        support,
        crossings,
    })
}

/// Points skipped next to a zero before the κ values are trusted.
const CROSS_MARGIN: usize = 6;
/// Points per side used to interpolate the regular part of κ.
const CROSS_POINTS: usize = 6;

/// Anchor for component `c` by continuing the integrated factor `f` from
/// the neighbouring component on the origin side through a zero of `γ`.
///
/// Near a zero of order `m` at `x0`, `κ = m/(s − x0) + η'/η` with `η`
/// smooth and non-vanishing. The regular part is interpolated across the
/// gap from both sides and integrated, so that `f/(s − x0)^m` is continuous
/// through `x0`.
fn cross_from_origin_side(
    gamma: &GridFn,
    known: &GridFn,
    field: &KappaField,
    solved: &[bool],
    c: usize,
    opts: &SolveOptions,
) -> Option<(usize, C64)> {
    let mask = &field.domain;
    let grid = mask.grid();
    let first = mask.components()[c].anchor;
    let dir: isize = if grid.coord(first, 0) > 0.0 { -1 } else { 1 };
    let in_range = |j: isize| j >= 0 && (j as usize) < grid.len();
    // walk through the gap towards the origin
    let mut i = first as isize + dir;
    let mut gap = Vec::new();
    while in_range(i) && !mask.contains(i as usize) {
        gap.push(i as usize);
        i += dir;
    }
    if gap.is_empty() || !in_range(i) {
        return None;
    }
    let neighbour = mask.label(i as usize)?;
    if !solved[neighbour] {
        return None;
    }
    let (lo, hi) = (*gap.iter().min()?, *gap.iter().max()?);
    let fit = zero_fit(gamma, argmin_norm(gamma, lo, hi), opts).ok()?;
    let x0 = fit.location;
    let run = |start: isize, step: isize, label: usize| -> Vec<usize> {
        (0..)
            .map(|k| start + step * k)
            .take_while(|&j| in_range(j) && mask.label(j as usize) == Some(label))
            .skip(CROSS_MARGIN)
            .take(CROSS_POINTS)
            .map(|j| j as usize)
            .collect()
    };
    let near = run(i, dir, neighbour);
    let far = run(first as isize, -dir, c);
    if near.len() < CROSS_POINTS || far.len() < CROSS_POINTS {
        return None;
    }
    let kappa = |j: usize| -> C64 { (0..grid.dim()).map(|a| field.kappa[a].value(j)).sum() };
    // order of the integrated factor's zero: residue of κ at x0
    let residue = near
        .iter()
        .map(|&j| (kappa(j) * (grid.coord(j, 0) - x0)).re)
        .sum::<f64>()
        / near.len() as f64;
    let m = (residue.round().max(0.0) as usize).min(fit.order) as f64;
    let scale = grid.step() * (CROSS_MARGIN + CROSS_POINTS) as f64;
    let pts: Vec<usize> = near.iter().chain(&far).copied().collect();
    let t: Vec<f64> = pts
        .iter()
        .map(|&j| (grid.coord(j, 0) - x0) / scale)
        .collect();
    let regular: Vec<C64> = pts
        .iter()
        .map(|&j| kappa(j) - m / (grid.coord(j, 0) - x0))
        .collect();
    let (a, b) = (near[0], far[0]);
    let (sa, sb) = (grid.coord(a, 0), grid.coord(b, 0));
    let integral = polyfit_integral(&t, &regular, 5, (sa - x0) / scale, (sb - x0) / scale) * scale;
    let ratio = ((sb - x0) / (sa - x0)).powi(m as i32);
    Some((b, known.value(a) * integral.exp() * ratio))
}

fn two_equation_diagnostics(sol: &mut ModelSolution, f: &Factors, gamma: &GridFn) {
    sol.diag(
        "reconstruction_residual",
        reconstruction_residual(&f.alpha, &f.beta, gamma, &f.identified),
    );
    sol.diag("curl_residual", f.curl_residual);
    sol.diag("components", f.support.components().len() as f64);
    sol.diag("unidentified_components", f.unidentified_components as f64);
    sol.diag("zero_crossings", f.crossings as f64);
    sol.diag(
        "identified_fraction",
        f.identified.count() as f64 / gamma.grid().len() as f64,
    );
}

/// Rescale two factors so the first is 1 at the origin, keeping the product.
fn normalise_pair(beta: GridFn, alpha: GridFn) -> (GridFn, GridFn) {
    let c = beta.at_origin();
    if c == C64::new(1.0, 0.0) || c.norm() == 0.0 {
        return (beta, alpha);
    }
    let h = (beta.is_hermitian(), alpha.is_hermitian());
    let b = beta
        .with_values(beta.values().iter().map(|v| v / c).collect())
        .set_hermitian_unchecked(h.0);
    let a = alpha
        .with_values(alpha.values().iter().map(|v| v * c).collect())
        .set_hermitian_unchecked(h.1);
    (b, a)
}

/// Model 3: `φ_x* φ_u = φ_z`, `(φ_x*)'_k φ_u = ε_k`.
pub fn solve_model3(m: &MomentFns, opts: &SolveOptions) -> Result<ModelSolution, SolveError> {
    let eps_k = require(&m.eps_k, "eps_k")?;
    let f = solve_two_equation(&m.phi_z, eps_k, m.dphi_z_k.as_deref(), opts)?;
    let mut sol = ModelSolution::new(f.identified.clone());
    two_equation_diagnostics(&mut sol, &f, &m.phi_z);
    let (mut x, mut u) = normalise_pair(f.beta, f.alpha);
    if opts.swap_labels {
        std::mem::swap(&mut x, &mut u);
    }
    sol.phi_xstar = Some(x);
    sol.phi_u = Some(u);
    Ok(sol)
}

/// Model 4: model 3 followed by `φ_{u_x} = φ_x / φ_x*`.
pub fn solve_model4(m: &MomentFns, opts: &SolveOptions) -> Result<ModelSolution, SolveError> {
    let phi_x = require(&m.phi_x, "phi_x")?;
    let mut sol = solve_model3(m, opts)?;
    let px = sol.phi_xstar.as_ref().expect("model 3 sets phi_xstar");
    let mask = sol
        .identified_mask
        .restrict(|i| px.value(i).norm() > opts.tau)?;
    let ux = safe_divide(phi_x, px, &mask)?.value;
    sol.diag(
        "reconstruction_residual_x",
        reconstruction_residual(px, &ux, phi_x, &mask),
    );
    sol.phi_ux = Some(ux);
    Ok(sol)
}

/// Model 4a: the two-equation system for the difference `x − z`,
/// `φ_{x−z} = φ_{u_x} φ_{−u}`, `(φ_{u_x})'_k φ_{−u} = i·E[(x_k − E x_k) e^{is·(x−z)}]`,
/// followed by `φ_x* = φ_x / φ_{u_x}`.
pub fn solve_model4a(m: &MomentFns, opts: &SolveOptions) -> Result<ModelSolution, SolveError> {
    let phi_zx = require(&m.phi_zx, "phi_zx")?;
    let eps = require(&m.eps_diff_k, "eps_diff_k")?;
    let phi_x = require(&m.phi_x, "phi_x")?;
    let gamma = phi_zx.conj();
    let f = solve_two_equation(&gamma, eps, m.dphi_diff_k.as_deref(), opts)?;
    let mut sol = ModelSolution::new(f.identified.clone());
    two_equation_diagnostics(&mut sol, &f, &gamma);
    let (mut ux, mut minus_u) = normalise_pair(f.beta, f.alpha);
    if opts.swap_labels {
        std::mem::swap(&mut ux, &mut minus_u);
    }
    let mask = f.identified.restrict(|i| ux.value(i).norm() > opts.tau)?;
    let px = safe_divide(phi_x, &ux, &mask)?.value;
    sol.diag(
        "reconstruction_residual_x",
        reconstruction_residual(&px, &ux, phi_x, &mask),
    );
    sol.phi_u = Some(minus_u.conj());
    sol.phi_ux = Some(ux);
    sol.phi_xstar = Some(px);
    Ok(sol)
}

/// `g = f_gx / f_x` on nodes where `f_x > floor·max f_x`.
fn spatial_ratio(
    num: &GridFn,
    den: &GridFn,
    floor: f64,
) -> Result<(GridFn, Vec<bool>), SolveError> {
    let d = den.real_part();
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(SolveError::EmptySpatialMask);
    }
    let mask: Vec<bool> = d.iter().map(|&v| v > floor * max).collect();
    let values = (0..d.len())
        .map(|i| {
            if mask[i] {
                C64::new(num.value(i).re / d[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok((num.with_values(values), mask))
}

/// Model 5: `Ft(g f_x*) φ_u = ε`, `Ft(g f_x*)'_k φ_u = ε_k`, `φ_x* φ_u = φ_z`.
/// The anchor `Ft(g f_x*)(0) = ε(0)` is the sample mean of `y`.
pub fn solve_model5(m: &MomentFns, opts: &SolveOptions) -> Result<ModelSolution, SolveError> {
    let eps = require(&m.eps, "eps")?;
    let eps_k = require(&m.eps_k, "eps_k")?;
    let f = solve_two_equation(eps, eps_k, m.deps_k.as_deref(), opts)?;
    let mut sol = ModelSolution::new(f.identified.clone());
    two_equation_diagnostics(&mut sol, &f, eps);
    let (ft_gf, phi_u) = (f.beta, f.alpha);
    let umask = f
        .identified
        .restrict(|i| phi_u.value(i).norm() > opts.tau)?;
    let px = safe_divide(&m.phi_z, &phi_u, &umask)?.value;
    sol.diag(
        "reconstruction_residual_z",
        reconstruction_residual(&px, &phi_u, &m.phi_z, &umask),
    );
    let fx = inverse_transform(&px)?;
    let fgx = inverse_transform(&ft_gf)?;
    let (g, gmask) = spatial_ratio(&fgx, &fx, opts.spatial_floor)?;
    sol.phi_xstar = Some(px);
    sol.phi_u = Some(phi_u);
    sol.ft_g = Some(ft_gf);
    sol.g_hat = Some(g);
    sol.g_mask = Some(gmask);
    Ok(sol)
}

/// Model 6: `φ_{−u} = φ_x / φ_z`, `Ft(g) φ_u = ε` with `ε = Ft(E(y|z))`.
pub fn solve_model6(
    phi_z: &GridFn,
    phi_x: &GridFn,
    w: &GridFn,
    opts: &SolveOptions,
) -> Result<ModelSolution, SolveError> {
    let zmask = detect_support(phi_z, opts.tau)?;
    let minus_u = safe_divide(phi_x, phi_z, &zmask)?.value;
    let phi_u = minus_u.conj();
    let eps = forward_transform(w)?;
    if eps.grid() != phi_z.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let umask = zmask.restrict(|i| phi_u.value(i).norm() > opts.tau)?;
    let ft_g = safe_divide(&eps, &phi_u, &umask)?.value;
    let g = inverse_transform(&ft_g)?;
    let mut sol = ModelSolution::new(umask.clone());
    sol.diag(
        "reconstruction_residual",
        reconstruction_residual(&ft_g, &phi_u, &eps, &umask),
    );
    sol.diag(
        "reconstruction_residual_x",
        reconstruction_residual(&minus_u, phi_z, phi_x, &zmask),
    );
    sol.diag("max_imag_g", g.max_imag());
    sol.g_hat = Some(g.with_values(g.values().iter().map(|v| C64::new(v.re, 0.0)).collect()));
    sol.g_mask = Some(vec![true; g.grid().len()]);
    sol.phi_u = Some(phi_u);
    sol.ft_g = Some(ft_g);
    Ok(sol)
}

/// Model 7: `Ft(g) φ_u = ε`, `Ft(g)'_k φ_u = ε_k`.
pub fn solve_model7(m: &MomentFns, opts: &SolveOptions) -> Result<ModelSolution, SolveError> {
    let eps = require(&m.eps, "eps")?;
    let eps_k = require(&m.eps_k, "eps_k")?;
    let f = solve_two_equation(eps, eps_k, m.deps_k.as_deref(), opts)?;
    let mut sol = ModelSolution::new(f.identified.clone());
    two_equation_diagnostics(&mut sol, &f, eps);
    let g = inverse_transform(&f.beta)?;
    sol.diag("max_imag_g", g.max_imag());
    sol.g_hat = Some(g.with_values(g.values().iter().map(|v| C64::new(v.re, 0.0)).collect()));
    sol.g_mask = Some(vec![true; g.grid().len()]);
    sol.ft_g = Some(f.beta);
    sol.phi_u = Some(f.alpha);
    Ok(sol)
}

/// `ρ = (w_y − w_x)/(w_x − z f(z))`, aggregated by a weighted median over
/// space-grid nodes inside `window` with weights `|w_x − z f(z)|`.
pub fn estimate_rho(
    w_x: &GridFn,
    w_y: &GridFn,
    zfz: &GridFn,
    window: (f64, f64),
) -> Result<f64, SolveError> {
    let grid = w_x.grid();
    if w_y.grid() != grid || zfz.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let den: Vec<f64> = (0..grid.len())
        .map(|i| w_x.value(i).re - zfz.value(i).re)
        .collect();
    let max = den.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let floor = 1e-3 * max;
    let mut pairs: Vec<(f64, f64)> = (0..grid.len())
        .filter(|&i| {
            let x = grid.coord(i, 0);
            x >= window.0 && x <= window.1 && den[i].abs() > floor && den[i].abs() > 0.0
        })
        .map(|i| ((w_y.value(i).re - w_x.value(i).re) / den[i], den[i].abs()))
        .collect();
    if pairs.is_empty() {
        return Err(SolveError::DenominatorTooSmall);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (r, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return Ok(*r);
        }
    }
    Ok(pairs.last().expect("non-empty").0)
}

/// Bandwidth-dependent pieces for the AR(1) extension in one dimension.
#[derive(Debug, Clone)]
pub struct RhoInputs {
    pub w_x: GridFn,
    pub w_y: GridFn,
    pub zfz: GridFn,
    pub window: (f64, f64),
}

/// Kernel estimates of `E(x f(z)|z)`, `E(y2 f(z)|z)` and `z f(z)` for a
/// one-dimensional sample with columns `z`, `x`, `y2`.
pub fn rho_inputs(
    sample: &Sample,
    space_grid: &Grid,
    bandwidth: f64,
) -> Result<RhoInputs, SolveError> {
    use crate::moments::weighted_density_on_grid;
    if sample.dim() != 1 {
        return Err(SolveError::MissingInput("one-dimensional sample"));
    }
    let x = sample.require_x()?;
    let y2 = sample.y2().ok_or(SolveError::MissingInput("y2"))?;
    let z = sample.z();
    let w_x = weighted_density_on_grid(x, z, space_grid, bandwidth)?;
    let w_y = weighted_density_on_grid(y2, z, space_grid, bandwidth)?;
    let zfz = weighted_density_on_grid(z, z, space_grid, bandwidth)?;
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(RhoInputs {
        w_x,
        w_y,
        zfz,
        window: (mean - 2.0 * sd, mean + 2.0 * sd),
    })
}

/// AR(1)-correlated errors: estimate `ρ`, correct `ε_1` and solve model 3.
/// `moments` must come from [`MomentFns::two_measurements`] on `(z, x)`.
pub fn solve_ar1(
    moments: &MomentFns,
    rho: &RhoInputs,
    opts: &SolveOptions,
) -> Result<ModelSolution, SolveError> {
    let r = estimate_rho(&rho.w_x, &rho.w_y, &rho.zfz, rho.window)?;
    if (1.0 - r).abs() < 1e-6 {
        return Err(SolveError::RhoNearOne(r));
    }
    let eps = require(&moments.eps_k, "eps_k")?;
    let dphi = require(&moments.dphi_z_k, "dphi_z_k")?;
    // i·E[x e^{isz}] = (1−ρ)(φ_x*)'φ_u + ρ·(φ_z)'
    let corrected: Vec<GridFn> = eps
        .iter()
        .zip(dphi)
        .map(|(e, d)| {
            let v = e
                .values()
                .iter()
                .zip(d.values())
                .map(|(a, b)| (a - b * r) / (1.0 - r))
                .collect();
            e.with_values(v).refresh_hermitian()
        })
        .collect();
    let mut m = moments.clone();
    m.eps_k = Some(corrected);
    let mut sol = solve_model3(&m, opts)?;
    sol.rho_hat = Some(r);
    sol.diag("rho_hat", r);
    Ok(sol)
}

/// Result of the common-factor reduction.
#[derive(Debug, Clone)]
pub struct FactorReduction {
    pub t1: DMatrix<f64>,
    pub t2: DMatrix<f64>,
    /// `‖T̃_1 A_1 − I‖` and `‖T̃_2 A_2 − I‖` (Frobenius).
    pub residual1: f64,
    pub residual2: f64,
    pub sample: Sample,
}

fn left_inverse(a: &DMatrix<f64>, block: usize) -> Result<(DMatrix<f64>, f64), SolveError> {
    let d = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax.max(1e-300))
        .count();
    if rank < d {
        return Err(SolveError::RankDeficient {
            block,
            rank,
            needed: d,
        });
    }
    let t = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| SolveError::BadFactor(e.to_string()))?;
    let res = (&t * a - DMatrix::<f64>::identity(d, d)).norm();
    Ok((t, res))
}

/// Map `z̃ = A x* + ũ` (rows of `A` split as `A_1` = first `split` rows,
/// `A_2` = the rest) to model 3 observables `z = T̃_1 z̃_1`, `x = T̃_2 z̃_2`.
/// `ztilde` holds `n` rows of `m` values.
pub fn reduce_factor_model(
    a: &DMatrix<f64>,
    split: usize,
    ztilde: &[f64],
) -> Result<FactorReduction, SolveError> {
    let (m, d) = a.shape();
    if split == 0 || split >= m {
        return Err(SolveError::BadFactor(format!(
            "split {split} must lie in 1..{m}"
        )));
    }
    if ztilde.len() % m != 0 {
        return Err(SolveError::BadFactor(format!(
            "sample length {} is not a multiple of {m}",
            ztilde.len()
        )));
    }
    let a1 = a.rows(0, split).into_owned();
    let a2 = a.rows(split, m - split).into_owned();
    let (t1, residual1) = left_inverse(&a1, 1)?;
    let (t2, residual2) = left_inverse(&a2, 2)?;
    let n = ztilde.len() / m;
    let mut z = Vec::with_capacity(n * d);
    let mut x = Vec::with_capacity(n * d);
    for row in ztilde.chunks(m) {
        for k in 0..d {
            z.push((0..split).map(|j| t1[(k, j)] * row[j]).sum());
            x.push((0..m - split).map(|j| t2[(k, j)] * row[split + j]).sum());
        }
    }
    let sample = Sample::new(d, z, Some(x), None, None)?;
    Ok(FactorReduction {
        t1,
        t2,
        residual1,
        residual2,
        sample,
    })
}

/// Low-frequency part of a CF identified on the zero component of `w_u`.
#[derive(Debug, Clone)]
pub struct IdentifiedPart {
    /// `φ` on the zero component of `W_u`, zero elsewhere.
    pub phi1: GridFn,
    /// 1 on grid points outside the identified region, 0 inside.
    pub flag: GridFn,
    /// Inverse transform of `phi1`: the identified smoothed density.
    pub density: GridFn,
}

pub fn identified_component(phi: &GridFn, w_u: &SupportMask) -> Result<IdentifiedPart, SolveError> {
    if phi.grid() != w_u.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let zero = w_u.zero_component().ok_or(SolveError::EmptyZeroComponent)?;
    let inside = |i: usize| w_u.label(i) == Some(zero);
    let phi1 = phi
        .with_values(
            (0..phi.grid().len())
                .map(|i| {
                    if inside(i) {
                        phi.value(i)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect(),
        )
        .refresh_hermitian();
    let flag = phi.with_values(
        (0..phi.grid().len())
            .map(|i| C64::new(if inside(i) { 0.0 } else { 1.0 }, 0.0))
            .collect(),
    );
    let density = inverse_transform(&phi1)?;
    Ok(IdentifiedPart {
        phi1,
        flag,
        density,
    })
}
