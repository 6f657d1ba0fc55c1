//! Log-derivative fields `κ_k = γ_k/γ` and their path integrals.

use std::collections::VecDeque;

use crate::grid::{grid_derivative, Grid, GridFn, C64};
use crate::solvers::SolveError;
use crate::support::{safe_divide, SupportMask};

/// Default curl tolerance for exact inputs.
pub const EXACT_CURL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KappaField {
    pub kappa: Vec<GridFn>,
    pub domain: SupportMask,
    /// Max of `|∂_j κ_k − ∂_k κ_j|` over points whose stencil lies in the
    /// domain (and above the core threshold). Zero for `d = 1`.
    pub curl_residual: f64,
}

/// `κ_k = γ_k/γ` on `mask`.
pub fn kappa_field(
    numerators: &[GridFn],
    gamma: &GridFn,
    mask: &SupportMask,
) -> Result<KappaField, SolveError> {
    kappa_field_with_core(numerators, gamma, mask, 0.0)
}

/// As [`kappa_field`], measuring the curl only where `|γ| ≥ core`.
pub fn kappa_field_with_core(
    numerators: &[GridFn],
    gamma: &GridFn,
    mask: &SupportMask,
    core: f64,
) -> Result<KappaField, SolveError> {
    let grid = gamma.grid();
    if numerators.len() != grid.dim() {
        return Err(SolveError::MissingInput("one numerator per axis"));
    }
    if mask.is_empty() {
        return Err(SolveError::Support(crate::support::SupportError::EmptyMask));
    }
    let kappa = numerators
        .iter()
        .map(|num| safe_divide(num, gamma, mask).map(|d| d.value))
        .collect::<Result<Vec<_>, _>>()?;
    let curl_residual = curl(&kappa, mask, |i| gamma.value(i).norm() >= core)?;
    Ok(KappaField {
        kappa,
        domain: mask.clone(),
        curl_residual,
    })
}

fn stencil_inside(grid: &Grid, mask: &SupportMask, i: usize, axes: [usize; 2]) -> bool {
    axes.iter().all(|&a| {
        [-1, 1]
            .iter()
            .all(|&d| grid.neighbor(i, a, d).is_some_and(|j| mask.contains(j)))
    })
}

fn curl(
    kappa: &[GridFn],
    mask: &SupportMask,
    core: impl Fn(usize) -> bool,
) -> Result<f64, SolveError> {
    let grid = mask.grid();
    let d = grid.dim();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        for k in j + 1..d {
            let dj_k = grid_derivative(&kappa[k], j)?;
            let dk_j = grid_derivative(&kappa[j], k)?;
            for i in 0..grid.len() {
                if mask.contains(i) && core(i) && stencil_inside(grid, mask, i, [j, k]) {
                    worst = worst.max((dj_k.value(i) - dk_j.value(i)).norm());
                }
            }
        }
    }
    Ok(worst)
}

/// Options for [`path_exponential_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathOptions {
    /// Axis order of the staircase; identity when `None`.
    pub axis_order: Option<Vec<usize>>,
    /// Maximum admissible curl residual for `d ≥ 2`; `None` disables the gate.
    pub curl_tolerance: Option<f64>,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            axis_order: None,
            curl_tolerance: Some(EXACT_CURL_TOLERANCE),
        }
    }
}

/// `anchor_value · exp ∫ κ·dξ` over one component, integrated from the
/// component's anchor. Zero outside the component.
pub fn path_exponential(
    field: &KappaField,
    component: usize,
    anchor_value: C64,
) -> Result<GridFn, SolveError> {
    path_exponential_with(field, component, anchor_value, &PathOptions::default())
}

pub fn path_exponential_with(
    field: &KappaField,
    component: usize,
    anchor_value: C64,
    opts: &PathOptions,
) -> Result<GridFn, SolveError> {
    let logs = path_integral(field, component, opts)?;
    let zero = C64::new(0.0, 0.0);
    let values = logs
        .into_iter()
        .map(|l| l.map_or(zero, |l| anchor_value * l.exp()))
        .collect();
    Ok(field.kappa[0].with_values(values).refresh_hermitian())
}

/// `∫_{anchor}^{s} κ·dξ` at every point of the component.
pub fn path_integral(
    field: &KappaField,
    component: usize,
    opts: &PathOptions,
) -> Result<Vec<Option<C64>>, SolveError> {
    let mask = &field.domain;
    let grid = mask.grid();
    let d = grid.dim();
    if d >= 2 {
        if let Some(tol) = opts.curl_tolerance {
            if field.curl_residual > tol {
                return Err(SolveError::CurlGate {
                    residual: field.curl_residual,
                    tolerance: tol,
                });
            }
        }
    }
    let comp = mask.component(component)?;
    let order: Vec<usize> = opts.axis_order.clone().unwrap_or_else(|| (0..d).collect());
    {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..d).collect::<Vec<_>>() {
            return Err(SolveError::MissingInput(
                "axis order must be a permutation of the axes",
            ));
        }
    }
    let inside = |i: usize| mask.label(i) == Some(component);
    let mut logs: Vec<Option<C64>> = vec![None; grid.len()];
    logs[comp.anchor] = Some(C64::new(0.0, 0.0));
    let mut reached = vec![comp.anchor];
    for &axis in &order {
        let mut next = Vec::new();
        for &p in &reached {
            let base = logs[p].expect("reached points carry a value");
            for (i, v) in integrate_line(&field.kappa[axis], grid, p, axis, &inside) {
                if logs[i].is_none() {
                    logs[i] = Some(base + v);
                    next.push(i);
                }
            }
        }
        reached.extend(next);
    }
    // points the staircase cannot reach: grow from reached neighbours
    if reached.len() < comp.members.len() {
        let h = grid.step();
        let mut queue: VecDeque<usize> = reached.into_iter().collect();
        while let Some(i) = queue.pop_front() {
            let li = logs[i].expect("queued points carry a value");
            for axis in 0..d {
                for dir in [-1isize, 1] {
                    if let Some(j) = grid.neighbor(i, axis, dir) {
                        if inside(j) && logs[j].is_none() {
                            let k = &field.kappa[axis];
                            logs[j] = Some(li + (k.value(i) + k.value(j)) * (0.5 * h * dir as f64));
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    Ok(logs)
}

/// Integrals of `κ` from `start` along the contiguous run of component
/// points on the `axis` line through `start` (excluding `start`).
/// Each cell is integrated exactly for the quintic through the six nearest
/// run points (fewer on short runs).
fn integrate_line(
    kappa: &GridFn,
    grid: &Grid,
    start: usize,
    axis: usize,
    inside: &impl Fn(usize) -> bool,
) -> Vec<(usize, C64)> {
    let mut lo = start;
    while let Some(j) = grid.neighbor(lo, axis, -1).filter(|&j| inside(j)) {
        lo = j;
    }
    let mut run = vec![lo];
    while let Some(j) = grid
        .neighbor(*run.last().expect("non-empty"), axis, 1)
        .filter(|&j| inside(j))
    {
        run.push(j);
    }
    let h = grid.step();
    let v: Vec<C64> = run.iter().map(|&i| kappa.value(i)).collect();
    let len = v.len();
    let width = len.min(6);
    let weights = cell_weights(width);
    let cell = |j: usize| {
        let st = j.saturating_sub((width - 1) / 2).min(len - width);
        let w = &weights[j - st];
        (0..width).map(|m| v[st + m] * w[m]).sum::<C64>() * h
    };
    let a = run
        .iter()
        .position(|&i| i == start)
        .expect("start lies on its own run");
    let mut acc = vec![C64::new(0.0, 0.0); len];
    for j in a + 1..len {
        acc[j] = acc[j - 1] + cell(j - 1);
    }
    for j in (0..a).rev() {
        acc[j] = acc[j + 1] - cell(j);
    }
    (0..len)
        .filter(|&j| j != a)
        .map(|j| (run[j], acc[j]))
        .collect()
}

/// `weights[o][m]`: integral over `[o, o+1]` of the Lagrange basis
/// polynomial of node `m` on the nodes `0..width`.
fn cell_weights(width: usize) -> Vec<Vec<f64>> {
    // 3-point Gauss-Legendre on [0, 1], exact through degree 5
    let r = (0.6f64).sqrt() / 2.0;
    let gauss = [
        (0.5 - r, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + r, 5.0 / 18.0),
    ];
    let basis = |m: usize, x: f64| {
        (0..width)
            .filter(|&k| k != m)
            .map(|k| (x - k as f64) / (m as f64 - k as f64))
            .product::<f64>()
    };
    (0..width.saturating_sub(1))
        .map(|o| {
            (0..width)
                .map(|m| gauss.iter().map(|&(t, w)| w * basis(m, o as f64 + t)).sum())
                .collect()
        })
        .collect()
}
