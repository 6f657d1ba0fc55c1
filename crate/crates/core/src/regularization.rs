//! Tail classification of error CFs, the weighted-integral class check and
//! spectral cut-off rules.

use thiserror::Error;

use crate::grid::{GridFn, C64};
use crate::support::SupportMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizationError {
    #[error("rate r_n must exceed 1, got {0}")]
    BadRate(f64),
    #[error("supersmooth order k must be at least 1")]
    BadOrder,
    #[error("safety factor must lie in (0, 1), got {0}")]
    BadSafety(f64),
    #[error("multi-index has {got} entries for a {dim}-dimensional grid")]
    BadMultiIndex { got: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SmoothnessKind {
    /// `|φ(s)| ~ C |s|^{-p}`
    OrdinarySmooth {
        p: f64,
    },
    /// `|φ(s)| ~ C e^{-c|s|^k}`
    Supersmooth {
        k: u32,
        c: f64,
    },
    /// `φ` vanishes identically beyond `radius`.
    BoundedSupport {
        radius: f64,
    },
    /// `|φ|` levels off at `floor` (an atom of mass about `floor`).
    MassPointMixture {
        floor: f64,
    },
    Inconclusive {
        reason: String,
    },
}

impl SmoothnessKind {
    pub fn name(&self) -> &'static str {
        match self {
            SmoothnessKind::OrdinarySmooth { .. } => "ordinary_smooth",
            SmoothnessKind::Supersmooth { .. } => "supersmooth",
            SmoothnessKind::BoundedSupport { .. } => "bounded_support",
            SmoothnessKind::MassPointMixture { .. } => "mass_point_mixture",
            SmoothnessKind::Inconclusive { .. } => "inconclusive",
        }
    }

    /// The order parameter (`p`, `k`, the support radius or the floor).
    pub fn parameter(&self) -> f64 {
        match self {
            SmoothnessKind::OrdinarySmooth { p } => *p,
            SmoothnessKind::Supersmooth { k, .. } => *k as f64,
            SmoothnessKind::BoundedSupport { radius } => *radius,
            SmoothnessKind::MassPointMixture { floor } => *floor,
            SmoothnessKind::Inconclusive { .. } => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityClass {
    pub kind: SmoothnessKind,
    /// RMS residual of the selected log-tail fit (0 where no fit is made).
    pub fit_residual: f64,
}

/// Minimum number of tail points for a fit.
const MIN_TAIL_POINTS: usize = 8;

fn lstsq2(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (icept, slope, rms)
}

/// Classify the tail of an error CF. `noise_floor` is the level below which
/// values are not trusted (`0` for analytic input).
///
/// The fit uses radii in `[R/2, R]`, where `R` is the grid extent or, when
/// the CF drops below `10·noise_floor` earlier, the largest radius above it.
pub fn classify_smoothness(phi_u: &GridFn, noise_floor: f64) -> RegularityClass {
    let grid = phi_u.grid();
    let s_max = grid.extent();
    let floor = noise_floor.max(1e-13);
    let pts: Vec<(f64, f64)> = (0..grid.len())
        .map(|i| (grid.norm(i), phi_u.value(i).norm()))
        .filter(|(r, _)| *r > 0.0 && *r <= s_max)
        .collect();

    // atom: |φ| stays clearly away from zero on the outer half
    let outer: Vec<f64> = pts
        .iter()
        .filter(|(r, _)| *r >= s_max / 2.0)
        .map(|p| p.1)
        .collect();
    if !outer.is_empty() {
        let lo = outer.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = outer.iter().copied().fold(0.0, f64::max);
        if lo > 0.01 && lo > 10.0 * noise_floor && hi / lo < 1.5 {
            let mut sorted = outer.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            return RegularityClass {
                kind: SmoothnessKind::MassPointMixture {
                    floor: sorted[sorted.len() / 2],
                },
                fit_residual: 0.0,
            };
        }
    }

    // exact zeros beyond some radius: bounded support
    if noise_floor == 0.0 {
        let last_nonzero = pts
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|p| p.0)
            .fold(0.0, f64::max);
        if last_nonzero < s_max - grid.step() * 2.0 {
            return RegularityClass {
                kind: SmoothnessKind::BoundedSupport {
                    radius: last_nonzero + grid.step(),
                },
                fit_residual: 0.0,
            };
        }
    }

    let reach = pts
        .iter()
        .filter(|(_, v)| *v > 10.0 * floor)
        .map(|p| p.0)
        .fold(0.0, f64::max);
    let tail: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(r, v)| *r >= reach / 2.0 && *r <= reach && *v > 10.0 * floor)
        .map(|&(r, v)| (r, v.ln()))
        .collect();
    if tail.len() < MIN_TAIL_POINTS || reach <= 2.0 * grid.step() {
        return RegularityClass {
            kind: SmoothnessKind::Inconclusive {
                reason: "tail window below the noise floor".into(),
            },
            fit_residual: f64::NAN,
        };
    }
    let y: Vec<f64> = tail.iter().map(|p| p.1).collect();
    let logr: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let r1: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let r2: Vec<f64> = tail.iter().map(|p| p.0 * p.0).collect();
    let (_, sp, ep) = lstsq2(&logr, &y);
    let (_, s1, e1) = lstsq2(&r1, &y);
    let (_, s2, e2) = lstsq2(&r2, &y);
    let best = [(0, ep), (1, e1), (2, e2)]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three candidates");
    let kind = match best.0 {
        0 if -sp > 0.0 => SmoothnessKind::OrdinarySmooth { p: -sp },
        1 if -s1 > 0.0 => SmoothnessKind::Supersmooth { k: 1, c: -s1 },
        2 if -s2 > 0.0 => SmoothnessKind::Supersmooth { k: 2, c: -s2 },
        _ => SmoothnessKind::Inconclusive {
            reason: "tail does not decay".into(),
        },
    };
    RegularityClass {
        kind,
        fit_residual: best.1,
    }
}

/// Value of `∫ Π(1+t_i²)^{-m_i} |b(t)| dt` and whether it is below `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiClassCheck {
    pub member: bool,
    pub value: f64,
}

/// Weighted absolute integral of `b` over the grid, by the trapezoid rule.
/// In one dimension the integral beyond the grid is added from a power
/// series fitted to the outer quarter of each tail (the decay exponent is
/// taken from a log-log fit); a non-integrable tail makes the value infinite.
pub fn check_phi_class(
    b: &GridFn,
    m: &[u32],
    v: f64,
) -> Result<PhiClassCheck, RegularizationError> {
    let grid = b.grid();
    if m.len() != grid.dim() {
        return Err(RegularizationError::BadMultiIndex {
            got: m.len(),
            dim: grid.dim(),
        });
    }
    let weight = |i: usize| -> f64 {
        (0..grid.dim())
            .map(|a| (1.0 + grid.coord(i, a).powi(2)).powi(-(m[a] as i32)))
            .product()
    };
    let integrand: Vec<f64> = (0..grid.len())
        .map(|i| b.value(i).norm() * weight(i))
        .collect();
    if integrand.iter().any(|x| !x.is_finite()) {
        return Ok(PhiClassCheck {
            member: false,
            value: f64::INFINITY,
        });
    }
    let value = if grid.dim() == 1 {
        let h = grid.step();
        let n = integrand.len();
        let mut total =
            h * (integrand.iter().sum::<f64>() - 0.5 * (integrand[0] + integrand[n - 1]));
        let t: Vec<f64> = (0..n).map(|i| grid.coord(i, 0)).collect();
        // right tail on [t_n-1, ∞), left tail on (-∞, t_0]
        total += tail_integral(&t[n / 2..], &integrand[n / 2..]);
        let left_t: Vec<f64> = t[..=n / 2].iter().rev().map(|x| -x).collect();
        let left_f: Vec<f64> = integrand[..=n / 2].iter().rev().copied().collect();
        total += tail_integral(&left_t, &left_f);
        total
    } else {
        integrand.iter().sum::<f64>() * grid.cell_volume()
    };
    Ok(PhiClassCheck {
        member: value < v,
        value,
    })
}

/// `∫_{T}^{∞} f`, `T = t.last()`, from samples of `f` on increasing `t ≥ 0`.
fn tail_integral(t: &[f64], f: &[f64]) -> f64 {
    let n = t.len();
    let end = t[n - 1];
    let idx: Vec<usize> = (0..n)
        .filter(|&i| t[i] >= 0.75 * end && t[i] > 0.0)
        .collect();
    if idx.len() < 6 {
        return 0.0;
    }
    if idx.iter().all(|&i| f[i] == 0.0) {
        return 0.0;
    }
    if idx.iter().any(|&i| f[i] <= 0.0) {
        // sign changes or exact zeros in the tail: no power law to extend
        return 0.0;
    }
    let lx: Vec<f64> = idx.iter().map(|&i| t[i].ln()).collect();
    let ly: Vec<f64> = idx.iter().map(|&i| f[i].ln()).collect();
    let (_, slope, _) = lstsq2(&lx, &ly);
    let mut p = -slope;
    if p <= 1.0 {
        return f64::INFINITY;
    }
    if p > 20.0 {
        return 0.0;
    }
    if (p - p.round()).abs() < 0.05 {
        p = p.round();
    }
    // f ≈ Σ_j c_j t^{-p-2j}, j = 0..terms
    let terms = 4usize.min(idx.len() / 2);
    let rows = idx.len();
    let design = nalgebra::DMatrix::from_fn(rows, terms, |r, c| {
        let x = t[idx[r]] / end;
        x.powf(-p - 2.0 * c as f64)
    });
    let rhs = nalgebra::DVector::from_iterator(rows, idx.iter().map(|&i| f[i]));
    let Ok(coef) = design.svd(true, true).solve(&rhs, 1e-14) else {
        return 0.0;
    };
    // ∫_T^∞ c (t/T)^{-q} dt = c T / (q - 1)
    (0..terms)
        .map(|j| coef[j] * end / (p + 2.0 * j as f64 - 1.0))
        .sum()
}

/// Spectral cut-off `B̄ = safety·(ln r_n)^{1/k}` and the ball it defines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffRule {
    pub r_n: f64,
    pub k: u32,
    pub safety: f64,
    pub b_bar: f64,
}

impl CutoffRule {
    /// The ball `{s : ‖s‖ < B̄}` on `grid`.
    pub fn ball(&self, grid: &crate::grid::Grid) -> SupportMask {
        SupportMask::ball(grid, self.b_bar)
    }
}

pub fn lemma2_cutoff(r_n: f64, k: u32, safety: f64) -> Result<CutoffRule, RegularizationError> {
    if !(r_n > 1.0 && r_n.is_finite()) {
        return Err(RegularizationError::BadRate(r_n));
    }
    if k == 0 {
        return Err(RegularizationError::BadOrder);
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(RegularizationError::BadSafety(safety));
    }
    let b_bar = safety * r_n.ln().powf(1.0 / k as f64);
    Ok(CutoffRule {
        r_n,
        k,
        safety,
        b_bar,
    })
}

/// `φ·I(‖s‖ < radius)`.
pub fn apply_cutoff_radius(phi: &GridFn, radius: f64) -> GridFn {
    let grid = phi.grid();
    let values = (0..grid.len())
        .map(|i| {
            if grid.norm(i) < radius {
                phi.value(i)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let h = phi.is_hermitian();
    // the ball is symmetric, so a hermitian input stays hermitian
    phi.with_values(values).set_hermitian_unchecked(h)
}

pub fn apply_cutoff(phi: &GridFn, rule: &CutoffRule) -> GridFn {
    apply_cutoff_radius(phi, rule.b_bar)
}

/// Data-driven radius: the largest `B` with `min_{‖s‖≤B} |φ̂_u| > 3σ`.
/// A heuristic, not a rate-guaranteed rule.
pub fn heuristic_cutoff(phi_u: &GridFn, sigma: f64) -> f64 {
    let grid = phi_u.grid();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid.norm(a).total_cmp(&grid.norm(b)));
    for &i in &order {
        if phi_u.value(i).norm() <= 3.0 * sigma {
            return grid.norm(i);
        }
    }
    f64::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grids;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn classifies_laplace_gaussian_and_mixture() {
        let (fg, _) = make_grids(1, 1024, 20.0).unwrap();
        let lap = GridFn::from_real_fn(&fg, |p| 1.0 / (1.0 + p[0] * p[0]));
        match classify_smoothness(&lap, 0.0).kind {
            SmoothnessKind::OrdinarySmooth { p } => assert!((p - 2.0).abs() < 0.05, "p={p}"),
            k => panic!("{k:?}"),
        }
        let gauss = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 2.0).exp());
        match classify_smoothness(&gauss, 0.0).kind {
            SmoothnessKind::Supersmooth { k, c } => {
                assert_eq!(k, 2);
                assert!((c - 0.5).abs() < 1e-6);
            }
            k => panic!("{k:?}"),
        }
        let mix = GridFn::from_real_fn(&fg, |p| 0.3 + 0.7 * (-p[0] * p[0] / 2.0).exp());
        match classify_smoothness(&mix, 0.0).kind {
            SmoothnessKind::MassPointMixture { floor } => assert!((floor - 0.3).abs() < 1e-6),
            k => panic!("{k:?}"),
        }
        let fejer = GridFn::from_real_fn(&fg, |p| (1.0 - p[0].abs() / 2.0).max(0.0));
        assert_eq!(
            classify_smoothness(&fejer, 0.0).kind.name(),
            "bounded_support"
        );
        let cauchy = GridFn::from_real_fn(&fg, |p| (-p[0].abs()).exp());
        match classify_smoothness(&cauchy, 0.0).kind {
            SmoothnessKind::Supersmooth { k, .. } => assert_eq!(k, 1),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn noise_floor_makes_tail_inconclusive() {
        let (fg, _) = make_grids(1, 64, 20.0).unwrap();
        let gauss = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] * 4.0).exp());
        assert_eq!(
            classify_smoothness(&gauss, 0.05).kind.name(),
            "inconclusive"
        );
    }

    #[test]
    fn phi_class_values() {
        for s_max in [10.0, 20.0, 40.0] {
            let (fg, _) = make_grids(1, 1024, s_max).unwrap();
            let b = GridFn::from_real_fn(&fg, |p| 1.0 / (1.0 + p[0] * p[0]));
            let r = check_phi_class(&b, &[0], 4.0).unwrap();
            assert!(r.member);
            assert!(
                (r.value - PI).abs() < 1e-6,
                "s_max={s_max} value={}",
                r.value
            );
            let one = GridFn::constant(&fg, C64::new(1.0, 0.0));
            let r = check_phi_class(&one, &[1], 4.0).unwrap();
            assert!((r.value - PI).abs() < 1e-6);
            let inv = GridFn::from_real_fn(&fg, |p| (p[0] * p[0]).exp());
            for m in 0..=8 {
                assert!(!check_phi_class(&inv, &[m], 1e6).unwrap().member);
            }
        }
        let (fg, _) = make_grids(1, 64, 10.0).unwrap();
        assert!(check_phi_class(&GridFn::zeros(&fg), &[0, 1], 1.0).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let r = lemma2_cutoff(std::f64::consts::E, 1, 0.999_999).unwrap();
        assert!(r.b_bar < 1.0);
        let r = lemma2_cutoff(100.0, 2, 0.9).unwrap();
        assert!((r.b_bar - 0.9 * 100f64.ln().sqrt()).abs() < 1e-15);
        assert!((r.b_bar - 1.932).abs() < 1e-3);
        assert!(lemma2_cutoff(1e4, 2, 0.9).unwrap().b_bar > r.b_bar);
        assert!(lemma2_cutoff(1.0, 2, 0.9).is_err());
        assert!(lemma2_cutoff(10.0, 0, 0.9).is_err());
        assert!(lemma2_cutoff(10.0, 1, 1.0).is_err());
    }

    #[test]
    fn apply_cutoff_cases() {
        let (fg, _) = make_grids(1, 128, 8.0).unwrap();
        let phi = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 8.0).exp());
        assert_eq!(apply_cutoff_radius(&phi, 100.0).values(), phi.values());
        let tiny = apply_cutoff_radius(&phi, 1e-9);
        for i in 0..fg.len() {
            let expect = if i == fg.origin_index() {
                phi.value(i)
            } else {
                C64::new(0.0, 0.0)
            };
            assert_eq!(tiny.value(i), expect);
        }
        let cut = apply_cutoff_radius(&phi, 2.0);
        let removed: f64 = (0..fg.len())
            .map(|i| (phi.value(i) - cut.value(i)).norm_sqr())
            .sum();
        let tail: f64 = (0..fg.len())
            .filter(|&i| fg.norm(i) >= 2.0)
            .map(|i| phi.value(i).norm_sqr())
            .sum();
        assert_eq!(removed, tail);
        assert!(cut.is_hermitian());
    }

    #[test]
    fn heuristic_cutoff_stops_at_noise() {
        let (fg, _) = make_grids(1, 256, 10.0).unwrap();
        let phi = GridFn::from_real_fn(&fg, |p| (-p[0] * p[0] / 2.0).exp());
        let b = heuristic_cutoff(&phi, 0.01);
        let exact = (2.0 * (1.0f64 / 0.03).ln()).sqrt();
        assert!((b - exact).abs() <= fg.step());
    }

    proptest! {
        #[test]
        fn cutoff_monotone(r1 in 1.5f64..1e6, r2 in 1.5f64..1e6, k in 1u32..4, s in 0.05f64..0.95) {
            let a = lemma2_cutoff(r1, k, s).unwrap();
            let b = lemma2_cutoff(r2, k, s).unwrap();
            prop_assert!(a.b_bar < r1.ln().powf(1.0 / k as f64));
            if r1 < r2 { prop_assert!(a.b_bar < b.b_bar); }
            if r1.ln() > 1.0 {
                let c = lemma2_cutoff(r1, k + 1, s).unwrap();
                prop_assert!(c.b_bar < a.b_bar);
            }
        }

        #[test]
        fn phi_class_monotone_in_m(m in 0u32..6, w in 0.5f64..3.0) {
            let (fg, _) = make_grids(1, 512, 20.0).unwrap();
            let b = GridFn::from_real_fn(&fg, |p| 1.0 / (1.0 + (p[0] / w).powi(2)));
            let lo = check_phi_class(&b, &[m], 1e6).unwrap().value;
            let hi = check_phi_class(&b, &[m + 1], 1e6).unwrap().value;
            prop_assert!(hi <= lo);
        }
    }
}
