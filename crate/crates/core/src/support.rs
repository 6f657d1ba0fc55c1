//! Numerical supports of frequency-domain functions: thresholded masks,
//! connected components with anchor points, masked division, and the
//! local analysis of isolated zeros of finite order.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{Grid, GridError, GridFn, C64};

/// Default cap on the order of a zero recognised by [`fit_zero`].
pub const DEFAULT_MAX_ORDER: usize = 4;

/// Mask points skipped next to a zero when extrapolating across it.
const CROSSING_MARGIN: usize = 3;
/// Points used for the extrapolating fit.
const CROSSING_POINTS: usize = 8;
const CROSSING_DEGREE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("support mask is empty")]
    EmptyMask,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("zero analysis is only available along a one-dimensional grid")]
    NotOneDimensional,
    #[error("window of {got} points is too small for order {max_order}")]
    WindowTooSmall { got: usize, max_order: usize },
    #[error("no zero near s = {0}")]
    NoZero(f64),
    #[error("zero near s = {location} has numerical order above {max_order}")]
    InfiniteOrder { location: f64, max_order: usize },
    #[error("not enough support points next to the zero at s = {0} to extrapolate")]
    NoFit(f64),
    #[error("component {0} does not exist")]
    NoComponent(usize),
}

/// A maximal face-connected set of mask points.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub members: Vec<usize>,
    /// Grid index where the value of the reconstructed function is pinned.
    pub anchor: usize,
    /// Value at the anchor when it is known.
    pub anchor_value: Option<C64>,
}

/// Boolean mask over a frequency grid with its component decomposition.
/// Components are ordered by the distance of their anchor to the origin, so
/// the component holding `s = 0` (if any) is component 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    grid: Grid,
    mask: Vec<bool>,
    labels: Vec<Option<usize>>,
    components: Vec<Component>,
    zero_component: Option<usize>,
}

impl SupportMask {
    pub fn from_mask(grid: &Grid, mask: Vec<bool>) -> Result<Self, SupportError> {
        if mask.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: mask.len(),
            }
            .into());
        }
        let origin = grid.origin_index();
        let mut labels = vec![None; grid.len()];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..grid.len() {
            if !mask[start] || labels[start].is_some() {
                continue;
            }
            let id = comps.len();
            let mut members = Vec::new();
            labels[start] = Some(id);
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                members.push(i);
                for axis in 0..grid.dim() {
                    for dir in [-1, 1] {
                        if let Some(j) = grid.neighbor(i, axis, dir) {
                            if mask[j] && labels[j].is_none() {
                                labels[j] = Some(id);
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        let mut components: Vec<Component> = comps
            .into_iter()
            .map(|members| {
                let anchor = if members.binary_search(&origin).is_ok() {
                    origin
                } else {
                    nearest_to_origin(grid, &members)
                };
                Component {
                    members,
                    anchor,
                    anchor_value: None,
                }
            })
            .collect();
        components.sort_by(|a, b| {
            grid.norm(a.anchor)
                .total_cmp(&grid.norm(b.anchor))
                .then(a.anchor.cmp(&b.anchor))
        });
        for (id, c) in components.iter().enumerate() {
            for &m in &c.members {
                labels[m] = Some(id);
            }
        }
        let zero_component = labels[origin];
        Ok(SupportMask {
            grid: grid.clone(),
            mask,
            labels,
            components,
            zero_component,
        })
    }

    /// Every grid point in one component.
    pub fn full(grid: &Grid) -> Self {
        Self::from_mask(grid, vec![true; grid.len()]).expect("full mask")
    }

    /// Open ball `‖s‖ < radius`.
    pub fn ball(grid: &Grid, radius: f64) -> Self {
        let mask = (0..grid.len()).map(|i| grid.norm(i) < radius).collect();
        Self::from_mask(grid, mask).expect("mask length matches grid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, index: usize) -> bool {
        self.mask[index]
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels[index]
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, id: usize) -> Result<&Component, SupportError> {
        self.components.get(id).ok_or(SupportError::NoComponent(id))
    }

    pub fn zero_component(&self) -> Option<usize> {
        self.zero_component
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn off_mask(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn set_anchor(
        &mut self,
        id: usize,
        index: usize,
        value: Option<C64>,
    ) -> Result<(), SupportError> {
        if self.labels.get(index).copied().flatten() != Some(id) {
            return Err(SupportError::NoComponent(id));
        }
        let c = &mut self.components[id];
        c.anchor = index;
        c.anchor_value = value;
        Ok(())
    }

    /// Mask restricted to points for which `keep` holds.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Result<Self, SupportError> {
        let mask = (0..self.mask.len())
            .map(|i| self.mask[i] && keep(i))
            .collect();
        Self::from_mask(&self.grid, mask)
    }

    /// Only the component containing the origin (empty if there is none).
    pub fn zero_only(&self) -> Self {
        let z = self.zero_component;
        self.restrict(|i| z.is_some() && self.labels[i] == z)
            .expect("same grid")
    }

    pub fn union(&self, other: &SupportMask) -> Result<Self, SupportError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch.into());
        }
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(a, b)| *a || *b)
            .collect();
        Self::from_mask(&self.grid, mask)
    }

    pub fn intersect(&self, other: &SupportMask) -> Result<Self, SupportError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch.into());
        }
        self.restrict(|i| other.mask[i])
    }
}

fn nearest_to_origin(grid: &Grid, members: &[usize]) -> usize {
    *members
        .iter()
        .min_by(|&&a, &&b| grid.norm(a).total_cmp(&grid.norm(b)).then(a.cmp(&b)))
        .expect("component is non-empty")
}

/// Mask `{s : |β(s)| > τ}` with face-neighbour components.
pub fn detect_support(beta: &GridFn, tau: f64) -> Result<SupportMask, SupportError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SupportError::BadThreshold(tau));
    }
    let mask: Vec<bool> = beta.values().iter().map(|v| v.norm() > tau).collect();
    if !mask.iter().any(|&m| m) {
        return Err(SupportError::EmptyMask);
    }
    SupportMask::from_mask(beta.grid(), mask)
}

/// Result of a masked division.
#[derive(Debug, Clone, PartialEq)]
pub struct Division {
    pub value: GridFn,
    pub off_mask: Vec<usize>,
}

/// `γ/β` on the mask, zero elsewhere.
pub fn safe_divide(
    gamma: &GridFn,
    beta: &GridFn,
    mask: &SupportMask,
) -> Result<Division, SupportError> {
    if gamma.grid() != beta.grid() || gamma.grid() != mask.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let zero = C64::new(0.0, 0.0);
    let values = (0..gamma.grid().len())
        .map(|i| {
            if mask.contains(i) {
                gamma.value(i) / beta.value(i)
            } else {
                zero
            }
        })
        .collect();
    let value = gamma.with_values(values).refresh_hermitian();
    Ok(Division {
        value,
        off_mask: mask.off_mask(),
    })
}

/// Local description of an isolated zero `β(s) ≈ η(s)(s − x0)^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroFit {
    pub location: f64,
    /// Grid index nearest to `location`.
    pub index: usize,
    pub order: usize,
    pub eta_value: C64,
}

/// Complex least-squares polynomial in the scaled variable `t`.
struct LocalPoly {
    coeffs: Vec<C64>,
}

impl LocalPoly {
    fn fit(t: &[f64], v: &[C64], degree: usize) -> LocalPoly {
        let design = DMatrix::from_fn(t.len(), degree + 1, |r, c| t[r].powi(c as i32));
        let svd = design.svd(true, true);
        let re = DVector::from_iterator(v.len(), v.iter().map(|z| z.re));
        let im = DVector::from_iterator(v.len(), v.iter().map(|z| z.im));
        let a = svd.solve(&re, 1e-14).expect("svd has both factors");
        let b = svd.solve(&im, 1e-14).expect("svd has both factors");
        LocalPoly {
            coeffs: a
                .iter()
                .zip(b.iter())
                .map(|(&r, &i)| C64::new(r, i))
                .collect(),
        }
    }

    /// `p^{(j)}(t) / j!`
    fn taylor(&self, j: usize, t: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate().skip(j).rev() {
            acc = acc * t + c * binomial(k, j);
        }
        acc
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares polynomial of `degree` through `(t, v)`, evaluated at `at`.
pub(crate) fn polyfit_eval(t: &[f64], v: &[C64], degree: usize, at: &[f64]) -> Vec<C64> {
    let p = LocalPoly::fit(t, v, degree);
    at.iter().map(|&x| p.taylor(0, x)).collect()
}

/// `∫_{t0}^{t1} p(t) dt` for the least-squares polynomial through `(t, v)`.
pub(crate) fn polyfit_integral(t: &[f64], v: &[C64], degree: usize, t0: f64, t1: f64) -> C64 {
    let p = LocalPoly::fit(t, v, degree);
    p.coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c * ((t1.powi(k as i32 + 1) - t0.powi(k as i32 + 1)) / (k + 1) as f64))
        .sum()
}

/// Minimiser of `|q(t)|` on `[lo, hi]`: dense scan then golden-section refinement.
fn argmin_abs(q: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 400;
    let h = (hi - lo) / SCAN as f64;
    let best = (0..=SCAN)
        .map(|k| lo + k as f64 * h)
        .min_by(|a, b| q(*a).total_cmp(&q(*b)))
        .expect("non-empty scan");
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    for _ in 0..80 {
        if q(c) < q(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Locate and classify the zero of `β` near grid index `index` with the
/// default vanishing tolerance `1e-8·sup|β|`.
pub fn fit_zero(beta: &GridFn, index: usize, max_order: usize) -> Result<ZeroFit, SupportError> {
    fit_zero_with_tolerance(beta, index, max_order, 1e-8 * beta.sup_norm())
}

/// As [`fit_zero`] with an explicit absolute tolerance. A Taylor term of
/// order `j` counts as vanishing when its size over the fit window is below `tol`.
pub fn fit_zero_with_tolerance(
    beta: &GridFn,
    index: usize,
    max_order: usize,
    tol: f64,
) -> Result<ZeroFit, SupportError> {
    let grid = beta.grid();
    if grid.dim() != 1 {
        return Err(SupportError::NotOneDimensional);
    }
    let degree = max_order + 4;
    let half = (degree + 2).max(8) as isize;
    let n = grid.len() as isize;
    let lo = (index as isize - half).max(0);
    let hi = (index as isize + half).min(n - 1);
    let count = (hi - lo + 1) as usize;
    if count < (2 * max_order + 1).max(degree + 1) {
        return Err(SupportError::WindowTooSmall {
            got: count,
            max_order,
        });
    }
    let h = grid.step();
    let s0 = grid.coord(index, 0);
    let scale = half as f64 * h;
    let t: Vec<f64> = (lo..=hi)
        .map(|i| (grid.coord(i as usize, 0) - s0) / scale)
        .collect();
    let v: Vec<C64> = (lo..=hi).map(|i| beta.value(i as usize)).collect();
    let p = LocalPoly::fit(&t, &v, degree);

    let mut root = 0.0;
    for m in 1..=max_order + 1 {
        let r = argmin_abs(|x| p.taylor(m - 1, x).norm(), -0.5, 0.5);
        if p.taylor(m - 1, r).norm() > tol {
            if m == 1 {
                return Err(SupportError::NoZero(s0));
            }
            // the lower derivatives share a root but this one does not
            break;
        }
        if m > 1 && (0..m - 1).any(|j| p.taylor(j, r).norm() > tol) {
            break;
        }
        root = r;
        if m > max_order {
            break;
        }
        let lead = p.taylor(m, r);
        if lead.norm() > tol {
            let location = s0 + r * scale;
            return Ok(ZeroFit {
                location,
                index: grid.nearest_index(&[location]).unwrap_or(index),
                order: m,
                eta_value: lead / scale.powi(m as i32),
            });
        }
    }
    Err(SupportError::InfiniteOrder {
        location: s0 + root * scale,
        max_order,
    })
}

/// Anchor for the component on the far side of a zero.
///
/// `beta_known` must hold valid values on the mask points on the near side
/// of `fit.location`; `target` is the component to be anchored. The value of
/// `β/(s − x0)^m` is extrapolated from the near side to the first point of
/// `target`. Returns `(anchor index, anchor value)`. `fit.order = 0` is
/// accepted for gaps where `β` is small but does not vanish.
pub fn extend_across_zero(
    beta_known: &GridFn,
    fit: &ZeroFit,
    mask: &SupportMask,
    target: usize,
) -> Result<(usize, C64), SupportError> {
    let grid = mask.grid();
    if grid.dim() != 1 {
        return Err(SupportError::NotOneDimensional);
    }
    if beta_known.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let comp = mask.component(target)?;
    let x0 = fit.location;
    let b = *comp
        .members
        .iter()
        .min_by(|&&a, &&c| {
            (grid.coord(a, 0) - x0)
                .abs()
                .total_cmp(&(grid.coord(c, 0) - x0).abs())
        })
        .expect("component is non-empty");
    let sb = grid.coord(b, 0);
    let dir: isize = if sb > x0 { -1 } else { 1 };
    // walk from the zero towards the known side
    let mut i = grid.nearest_index(&[x0]).ok_or(SupportError::NoFit(x0))? as isize;
    let mut near = Vec::new();
    let mut skipped = 0;
    let mut side_label = None;
    while i >= 0 && (i as usize) < grid.len() && near.len() < CROSSING_POINTS {
        let iu = i as usize;
        let s = grid.coord(iu, 0);
        let known_side = (s - x0) * (dir as f64) > 0.0;
        if known_side && mask.contains(iu) {
            let lab = mask.label(iu);
            if side_label.is_none() {
                side_label = lab;
            }
            if lab != side_label {
                break;
            }
            if skipped < CROSSING_MARGIN {
                skipped += 1;
            } else {
                near.push(iu);
            }
        } else if known_side && side_label.is_some() {
            break;
        }
        i += dir;
    }
    if near.len() < CROSSING_DEGREE + 2 {
        return Err(SupportError::NoFit(x0));
    }
    let m = fit.order as i32;
    let scale = CROSSING_POINTS as f64 * grid.step();
    let t: Vec<f64> = near
        .iter()
        .map(|&j| (grid.coord(j, 0) - x0) / scale)
        .collect();
    let eta: Vec<C64> = near
        .iter()
        .map(|&j| beta_known.value(j) / (grid.coord(j, 0) - x0).powi(m))
        .collect();
    let p = LocalPoly::fit(&t, &eta, CROSSING_DEGREE);
    let eta_b = p.taylor(0, (sb - x0) / scale);
    Ok((b, eta_b * (sb - x0).powi(m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grids;
    use proptest::prelude::*;

    fn sinc(s: f64) -> f64 {
        if s == 0.0 {
            1.0
        } else {
            s.sin() / s
        }
    }

    #[test]
    fn gaussian_support_is_one_component() {
        let (fg, _) = make_grids(1, 64, 4.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 2.0).exp());
        let m = detect_support(&b, 1e-10).unwrap();
        assert_eq!(m.count(), fg.len());
        assert_eq!(m.components().len(), 1);
        assert_eq!(m.zero_component(), Some(0));
        assert_eq!(m.components()[0].anchor, fg.origin_index());
    }

    #[test]
    fn sinc_components_split_at_multiples_of_pi() {
        // spacing π/80 puts every zero on the grid
        let (fg, _) = make_grids(1, 1024, 512.0 * std::f64::consts::PI / 80.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| sinc(p[0]));
        let m = detect_support(&b, 1e-3).unwrap();
        let zc = &m.components()[0];
        let lo = fg.coord(zc.members[0], 0);
        let hi = fg.coord(*zc.members.last().unwrap(), 0);
        assert!(lo > -std::f64::consts::PI && lo < -std::f64::consts::PI + 0.1);
        assert!(hi < std::f64::consts::PI && hi > std::f64::consts::PI - 0.1);
        // zeros at kπ for k = 1..6 on each side of [-20, 20]
        assert_eq!(m.components().len(), 13);
        for c in &m.components()[1..] {
            let a = fg.coord(c.anchor, 0).abs();
            let k = (a / std::f64::consts::PI).floor();
            assert!(a - k * std::f64::consts::PI < 0.1);
        }
    }

    #[test]
    fn zero_beta_is_an_error() {
        let (fg, _) = make_grids(1, 16, 4.0).unwrap();
        assert_eq!(
            detect_support(&GridFn::zeros(&fg), 1e-10).unwrap_err(),
            SupportError::EmptyMask
        );
        assert!(matches!(
            detect_support(&GridFn::zeros(&fg), 0.0),
            Err(SupportError::BadThreshold(_))
        ));
    }

    #[test]
    fn division_cases() {
        let (fg, _) = make_grids(1, 256, 6.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 2.0).exp());
        let g = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0]).exp());
        let m = detect_support(&b, 1e-10).unwrap();
        let one = safe_divide(&b, &b, &m).unwrap().value;
        assert!(one.values().iter().all(|v| *v == C64::new(1.0, 0.0)));
        let q = safe_divide(&g, &b, &m).unwrap().value;
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            assert!((q.value(i).re - (-s * s / 2.0).exp()).abs() < 1e-12);
        }
        assert!(q.is_hermitian());

        // β dips to 1e-6 near s = 2, γ carries 1e-3 noise
        let dip = GridFn::from_real_fn(&fg, |p| 1e-6 + (p[0] - 2.0).powi(2));
        let noisy = GridFn::from_fn(&fg, |p| {
            C64::new((p[0] - 2.0).powi(2) + 1e-3 * (37.0 * p[0]).sin(), 0.0)
        });
        let m = detect_support(&dip, 1e-2).unwrap();
        let d = safe_divide(&noisy, &dip, &m).unwrap();
        assert!(!d.off_mask.is_empty());
        let j = fg.nearest_index(&[2.0]).unwrap();
        assert!(d.off_mask.contains(&j));
        assert_eq!(d.value.value(j), C64::new(0.0, 0.0));
        assert!(d
            .value
            .values()
            .iter()
            .all(|v| v.is_finite() && v.norm() < 1.2));
    }

    #[test]
    fn fit_zero_examples() {
        let (fg, _) = make_grids(1, 1024, 20.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| p[0] * (-p[0] * p[0] / 2.0).exp());
        let f = fit_zero(&b, fg.origin_index(), DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(f.order, 1);
        assert!(f.location.abs() < 1e-9);
        assert!((f.eta_value - C64::new(1.0, 0.0)).norm() < 1e-6);

        let b = GridFn::from_real_fn(&fg, |p| sinc(p[0]));
        let j = fg.nearest_index(&[std::f64::consts::PI]).unwrap();
        let f = fit_zero(&b, j, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(f.order, 1);
        assert!((f.location - std::f64::consts::PI).abs() < 1e-6);
        assert!((f.eta_value.re + 1.0 / std::f64::consts::PI).abs() < 1e-4);
    }

    #[test]
    fn flat_zero_has_no_finite_order() {
        let (fg, _) = make_grids(1, 1024, 5.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| {
            if p[0] == 0.0 {
                0.0
            } else {
                (-1.0 / (p[0] * p[0])).exp()
            }
        });
        assert!(matches!(
            fit_zero(&b, fg.origin_index(), DEFAULT_MAX_ORDER),
            Err(SupportError::InfiniteOrder { .. })
        ));
    }

    #[test]
    fn no_zero_is_reported() {
        let (fg, _) = make_grids(1, 256, 8.0).unwrap();
        let b = GridFn::from_real_fn(&fg, |p| 2.0 + p[0].cos());
        assert!(matches!(
            fit_zero(&b, fg.origin_index(), 4),
            Err(SupportError::NoZero(_))
        ));
    }

    #[test]
    fn crossing_recovers_sign_flip_and_symmetry() {
        let (fg, _) = make_grids(1, 1024, 20.0).unwrap();
        let truth = GridFn::from_real_fn(&fg, |p| sinc(p[0]));
        let m = detect_support(&truth, 1e-2).unwrap();
        let z = m.zero_component().unwrap();
        // only the zero component is known
        let known = truth.with_values(
            (0..fg.len())
                .map(|i| {
                    if m.label(i) == Some(z) {
                        truth.value(i)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect(),
        );
        let pi = std::f64::consts::PI;
        let plus = fit_zero(&truth, fg.nearest_index(&[pi]).unwrap(), 4).unwrap();
        let minus = fit_zero(&truth, fg.nearest_index(&[-pi]).unwrap(), 4).unwrap();
        let target_p = m.label(fg.nearest_index(&[pi + 0.5]).unwrap()).unwrap();
        let target_m = m.label(fg.nearest_index(&[-pi - 0.5]).unwrap()).unwrap();
        let (bp, vp) = extend_across_zero(&known, &plus, &m, target_p).unwrap();
        let (bm, vm) = extend_across_zero(&known, &minus, &m, target_m).unwrap();
        assert!(fg.coord(bp, 0) > pi);
        assert!(vp.re < 0.0);
        assert!((vp - truth.value(bp)).norm() < 1e-5);
        assert!((vm - vp.conj()).norm() < 1e-12);
        assert_eq!(fg.mirror_index(bp), Some(bm));
    }

    #[test]
    fn missing_fit_is_an_error() {
        let (fg, _) = make_grids(1, 64, 8.0).unwrap();
        // nothing known on either side
        let b = GridFn::from_real_fn(&fg, |p| if p[0].abs() > 7.0 { 1.0 } else { 0.0 });
        let m = detect_support(&b, 0.5).unwrap();
        let fit = ZeroFit {
            location: 0.0,
            index: fg.origin_index(),
            order: 1,
            eta_value: C64::new(1.0, 0.0),
        };
        assert!(matches!(
            extend_across_zero(&b, &fit, &m, 0),
            Err(SupportError::NoFit(_))
        ));
    }

    #[test]
    fn two_dimensional_components_use_face_neighbours() {
        let (fg, _) = make_grids(2, 8, 4.0).unwrap();
        let mut mask = vec![false; fg.len()];
        let a = fg.index_of_offsets(&[0, 0]).unwrap();
        let b = fg.index_of_offsets(&[1, 1]).unwrap();
        mask[a] = true;
        mask[b] = true;
        let m = SupportMask::from_mask(&fg, mask).unwrap();
        assert_eq!(m.components().len(), 2);
        assert_eq!(m.zero_component(), Some(0));
    }

    proptest! {
        #[test]
        fn components_partition_mask(bits in proptest::collection::vec(any::<bool>(), 256)) {
            let (fg, _) = make_grids(2, 16, 4.0).unwrap();
            let m = SupportMask::from_mask(&fg, bits.clone()).unwrap();
            let total: usize = m.components().iter().map(|c| c.members.len()).sum();
            prop_assert_eq!(total, m.count());
            for (id, c) in m.components().iter().enumerate() {
                prop_assert!(c.members.contains(&c.anchor));
                for &i in &c.members {
                    prop_assert_eq!(m.label(i), Some(id));
                }
            }
            prop_assert_eq!(m.zero_component().is_some(), bits[fg.origin_index()]);
        }

        #[test]
        fn support_monotone_in_threshold(t1 in 1e-3f64..0.5, t2 in 1e-3f64..0.5) {
            let (fg, _) = make_grids(1, 128, 10.0).unwrap();
            let b = GridFn::from_real_fn(&fg, |p| sinc(p[0]));
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = detect_support(&b, lo).unwrap();
            let c = detect_support(&b, hi).unwrap();
            for i in 0..fg.len() {
                prop_assert!(!c.contains(i) || a.contains(i));
            }
        }

        #[test]
        fn division_reconstructs_on_mask(seed in 0u64..1000) {
            let (fg, _) = make_grids(1, 64, 8.0).unwrap();
            let w = seed as f64 * 0.01 + 0.3;
            let b = GridFn::from_fn(&fg, |p| C64::new((w * p[0]).cos(), 0.2 * (p[0] * w).sin()));
            let g = GridFn::from_fn(&fg, |p| C64::new(p[0].sin(), w));
            let m = detect_support(&b, 1e-3).unwrap();
            let d = safe_divide(&g, &b, &m).unwrap();
            for i in 0..fg.len() {
                if m.contains(i) {
                    let r = d.value.value(i) * b.value(i);
                    prop_assert!((r - g.value(i)).norm() <= 8.0 * f64::EPSILON * g.value(i).norm());
                } else {
                    prop_assert_eq!(d.value.value(i), C64::new(0.0, 0.0));
                }
            }
        }

        #[test]
        fn exact_power_orders_are_recovered(m in 1usize..=4) {
            let (fg, _) = make_grids(1, 512, 8.0).unwrap();
            let b = GridFn::from_real_fn(&fg, |p| p[0].powi(m as i32) * (1.0 + 0.5 * p[0]));
            let f = fit_zero(&b, fg.origin_index(), DEFAULT_MAX_ORDER).unwrap();
            prop_assert_eq!(f.order, m);
            prop_assert!((f.eta_value.re - 1.0).abs() < 1e-6);
        }
    }
}
