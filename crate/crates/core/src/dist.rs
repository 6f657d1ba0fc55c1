//! Parametric families for synthetic latent variables and regression
//! functions, with samplers and closed-form characteristic functions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use thiserror::Error;

use crate::grid::{Grid, GridFn, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("cannot parse `{0}`")]
    Syntax(String),
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("`{family}` takes {expected} arguments, got {got}")]
    Arity {
        family: String,
        expected: &'static str,
        got: usize,
    },
    #[error("invalid parameter in `{0}`")]
    BadParameter(String),
}

/// Cantor levels are capped so that `3^{-L}` stays far above rounding.
pub const MAX_CANTOR_LEVELS: u32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Centred Laplace with scale `b`, CF `1/(1+b²s²)`.
    Laplace {
        b: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    /// Atom of mass `weight` at `at`, the rest from `cont`.
    Mixture {
        weight: f64,
        at: f64,
        cont: Box<Dist>,
    },
    /// Symmetric Cantor measure `Σ_{j≤L} ±3^{-j}`, CF `Π cos(s/3^j)`.
    Cantor {
        levels: u32,
    },
    Point {
        at: f64,
    },
    /// Density `(1 − cos wx)/(π w x²)` with CF `(1 − |s|/w)_+`.
    Fejer {
        w: f64,
    },
}

fn split_call(text: &str) -> Result<(String, Vec<String>), DistError> {
    let t = text.trim();
    let open = t.find('(').ok_or_else(|| DistError::Syntax(t.into()))?;
    if !t.ends_with(')') {
        return Err(DistError::Syntax(t.into()));
    }
    let name = t[..open].trim().to_ascii_lowercase();
    let inner = &t[open + 1..t.len() - 1];
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in inner.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err(DistError::Syntax(t.into()));
        }
        if ch == ',' && depth == 0 {
            args.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    if depth != 0 {
        return Err(DistError::Syntax(t.into()));
    }
    if !cur.trim().is_empty() || !args.is_empty() {
        args.push(cur.trim().to_string());
    }
    Ok((name, args))
}

fn nums(text: &str, args: &[String]) -> Result<Vec<f64>, DistError> {
    args.iter()
        .map(|a| {
            a.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DistError::BadParameter(text.into()))
        })
        .collect()
}

fn arity(family: &str, expected: &'static str, got: usize, ok: bool) -> Result<(), DistError> {
    if ok {
        Ok(())
    } else {
        Err(DistError::Arity {
            family: family.into(),
            expected,
            got,
        })
    }
}

impl FromStr for Dist {
    type Err = DistError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (name, args) = split_call(text)?;
        let bad = || DistError::BadParameter(text.trim().into());
        let d = match name.as_str() {
            "gaussian" | "normal" => {
                arity(&name, "2", args.len(), args.len() == 2)?;
                let v = nums(text, &args)?;
                Dist::Gaussian {
                    mean: v[0],
                    sd: v[1],
                }
            }
            "laplace" => {
                arity(&name, "1", args.len(), args.len() == 1)?;
                Dist::Laplace {
                    b: nums(text, &args)?[0],
                }
            }
            "uniform" => {
                arity(&name, "2", args.len(), args.len() == 2)?;
                let v = nums(text, &args)?;
                Dist::Uniform { a: v[0], b: v[1] }
            }
            "mixture" => {
                arity(&name, "3", args.len(), args.len() == 3)?;
                let v = nums(text, &args[..2])?;
                Dist::Mixture {
                    weight: v[0],
                    at: v[1],
                    cont: Box::new(args[2].parse()?),
                }
            }
            "cantor" => {
                arity(&name, "1", args.len(), args.len() == 1)?;
                let levels: u32 = args[0].parse().map_err(|_| bad())?;
                Dist::Cantor { levels }
            }
            "point" => {
                arity(&name, "1", args.len(), args.len() == 1)?;
                Dist::Point {
                    at: nums(text, &args)?[0],
                }
            }
            "fejer" => {
                arity(&name, "1", args.len(), args.len() == 1)?;
                Dist::Fejer {
                    w: nums(text, &args)?[0],
                }
            }
            _ => return Err(DistError::UnknownFamily(name)),
        };
        if d.is_valid() {
            Ok(d)
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Gaussian { mean, sd } => write!(f, "gaussian({mean},{sd})"),
            Dist::Laplace { b } => write!(f, "laplace({b})"),
            Dist::Uniform { a, b } => write!(f, "uniform({a},{b})"),
            Dist::Mixture { weight, at, cont } => write!(f, "mixture({weight},{at},{cont})"),
            Dist::Cantor { levels } => write!(f, "cantor({levels})"),
            Dist::Point { at } => write!(f, "point({at})"),
            Dist::Fejer { w } => write!(f, "fejer({w})"),
        }
    }
}

impl Dist {
    pub fn is_valid(&self) -> bool {
        match self {
            Dist::Gaussian { sd, .. } => *sd > 0.0,
            Dist::Laplace { b } => *b > 0.0,
            Dist::Uniform { a, b } => a < b,
            Dist::Mixture { weight, cont, .. } => (0.0..=1.0).contains(weight) && cont.is_valid(),
            Dist::Cantor { levels } => (1..=MAX_CANTOR_LEVELS).contains(levels),
            Dist::Point { .. } => true,
            Dist::Fejer { w } => *w > 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Dist::Laplace { b } => {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                b * (e1 - e2)
            }
            Dist::Uniform { a, b } => rng.random_range(*a..*b),
            Dist::Mixture { weight, at, cont } => {
                if rng.random::<f64>() < *weight {
                    *at
                } else {
                    cont.sample(rng)
                }
            }
            Dist::Cantor { levels } => {
                let mut x = 0.0;
                let mut scale = 1.0;
                for _ in 0..*levels {
                    scale /= 3.0;
                    x += if rng.random::<bool>() { scale } else { -scale };
                }
                x
            }
            Dist::Point { at } => *at,
            Dist::Fejer { w } => {
                // rejection from a Cauchy with scale 2/w, envelope constant 2
                let c = 2.0 / w;
                loop {
                    let t: f64 = rng.random_range(-0.5..0.5);
                    let x = c * (std::f64::consts::PI * t).tan();
                    let cauchy = 1.0 / (std::f64::consts::PI * c * (1.0 + (x / c).powi(2)));
                    let dens = fejer_density(*w, x);
                    if rng.random::<f64>() * 2.0 * cauchy <= dens {
                        return x;
                    }
                }
            }
        }
    }

    /// Characteristic function `E e^{isX}`.
    pub fn cf(&self, s: f64) -> C64 {
        match self {
            Dist::Gaussian { mean, sd } => {
                C64::from_polar((-0.5 * sd * sd * s * s).exp(), mean * s)
            }
            Dist::Laplace { b } => C64::new(1.0 / (1.0 + b * b * s * s), 0.0),
            Dist::Uniform { a, b } => {
                let h = 0.5 * (b - a) * s;
                let sinc = if h.abs() < 1e-8 {
                    1.0 - h * h / 6.0
                } else {
                    h.sin() / h
                };
                C64::from_polar(1.0, 0.5 * (a + b) * s) * sinc
            }
            Dist::Mixture { weight, at, cont } => {
                C64::from_polar(*weight, at * s) + cont.cf(s) * (1.0 - weight)
            }
            Dist::Cantor { levels } => {
                let mut p = 1.0;
                let mut t = s;
                for _ in 0..*levels {
                    t /= 3.0;
                    p *= t.cos();
                }
                C64::new(p, 0.0)
            }
            Dist::Point { at } => C64::from_polar(1.0, at * s),
            Dist::Fejer { w } => C64::new((1.0 - s.abs() / w).max(0.0), 0.0),
        }
    }

    /// Mean and variance where finite.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match self {
            Dist::Gaussian { mean, sd } => Some((*mean, sd * sd)),
            Dist::Laplace { b } => Some((0.0, 2.0 * b * b)),
            Dist::Uniform { a, b } => Some((0.5 * (a + b), (b - a).powi(2) / 12.0)),
            Dist::Mixture { weight, at, cont } => {
                let (m, v) = cont.moments()?;
                let mean = weight * at + (1.0 - weight) * m;
                let second = weight * at * at + (1.0 - weight) * (v + m * m);
                Some((mean, second - mean * mean))
            }
            Dist::Cantor { levels } => {
                Some((0.0, (0..*levels).map(|j| 9f64.powi(-(j as i32) - 1)).sum()))
            }
            Dist::Point { at } => Some((*at, 0.0)),
            Dist::Fejer { .. } => None,
        }
    }

    /// Whether the law has an atom (so no density exists).
    pub fn has_atom(&self) -> bool {
        match self {
            Dist::Mixture { weight, cont, .. } => *weight > 0.0 || cont.has_atom(),
            Dist::Point { .. } | Dist::Cantor { .. } => true,
            _ => false,
        }
    }
}

fn fejer_density(w: f64, x: f64) -> f64 {
    let wx = w * x;
    if wx.abs() < 1e-4 {
        w / (2.0 * std::f64::consts::PI) * (1.0 - wx * wx / 12.0)
    } else {
        (1.0 - wx.cos()) / (std::f64::consts::PI * w * x * x)
    }
}

/// CF of a vector with independent components drawn from `dist`.
pub fn product_cf(dist: &Dist, grid: &Grid) -> GridFn {
    GridFn::from_fn(grid, |p| p.iter().map(|&s| dist.cf(s)).product())
}

/// Regression functions of one variable.
#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    Linear {
        a: f64,
        b: f64,
    },
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `1(x > c)`
    Indicator {
        c: f64,
    },
    /// `Σ exp(−(x − c_j)²/(2 w²))`
    BumpSum {
        width: f64,
        centers: Vec<f64>,
    },
    /// `g(x)·exp(−x²/(2 s²))`
    Windowed {
        scale: f64,
        inner: Box<GSpec>,
    },
}

impl FromStr for GSpec {
    type Err = DistError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (name, args) = split_call(text)?;
        let bad = || DistError::BadParameter(text.trim().into());
        let g = match name.as_str() {
            "linear" => {
                arity(&name, "2", args.len(), args.len() == 2)?;
                let v = nums(text, &args)?;
                GSpec::Linear { a: v[0], b: v[1] }
            }
            "quadratic" => {
                arity(&name, "3", args.len(), args.len() == 3)?;
                let v = nums(text, &args)?;
                GSpec::Quadratic {
                    a: v[0],
                    b: v[1],
                    c: v[2],
                }
            }
            "indicator" => {
                arity(&name, "1", args.len(), args.len() == 1)?;
                GSpec::Indicator {
                    c: nums(text, &args)?[0],
                }
            }
            "bump_sum" => {
                arity(&name, "at least 2", args.len(), args.len() >= 2)?;
                let v = nums(text, &args)?;
                if v[0] <= 0.0 {
                    return Err(bad());
                }
                GSpec::BumpSum {
                    width: v[0],
                    centers: v[1..].to_vec(),
                }
            }
            "windowed" => {
                arity(&name, "2", args.len(), args.len() == 2)?;
                let scale = nums(text, &args[..1])?[0];
                if scale <= 0.0 {
                    return Err(bad());
                }
                GSpec::Windowed {
                    scale,
                    inner: Box::new(args[1].parse()?),
                }
            }
            _ => return Err(DistError::UnknownFamily(name)),
        };
        Ok(g)
    }
}

impl fmt::Display for GSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GSpec::Linear { a, b } => write!(f, "linear({a},{b})"),
            GSpec::Quadratic { a, b, c } => write!(f, "quadratic({a},{b},{c})"),
            GSpec::Indicator { c } => write!(f, "indicator({c})"),
            GSpec::BumpSum { width, centers } => {
                write!(f, "bump_sum({width}")?;
                for c in centers {
                    write!(f, ",{c}")?;
                }
                write!(f, ")")
            }
            GSpec::Windowed { scale, inner } => write!(f, "windowed({scale},{inner})"),
        }
    }
}

impl GSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GSpec::Linear { a, b } => a + b * x,
            GSpec::Quadratic { a, b, c } => a + b * x + c * x * x,
            GSpec::Indicator { c } => {
                if x > *c {
                    1.0
                } else {
                    0.0
                }
            }
            GSpec::BumpSum { width, centers } => centers
                .iter()
                .map(|c| (-(x - c).powi(2) / (2.0 * width * width)).exp())
                .sum(),
            GSpec::Windowed { scale, inner } => {
                inner.eval(x) * (-x * x / (2.0 * scale * scale)).exp()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grids;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_and_display_round_trip() {
        for t in [
            "gaussian(0,1)",
            "laplace(0.5)",
            "uniform(-1,1)",
            "mixture(0.3,0,gaussian(0,1))",
            "cantor(20)",
            "point(1.5)",
            "fejer(2)",
        ] {
            let d: Dist = t.parse().unwrap();
            assert_eq!(d.to_string(), t);
        }
        for t in [
            "linear(1,1)",
            "quadratic(0,0,1)",
            "indicator(0)",
            "bump_sum(0.2,-1,1)",
            "windowed(3,linear(0,1))",
        ] {
            let g: GSpec = t.parse().unwrap();
            assert_eq!(g.to_string(), t);
        }
        assert!("gaussian(0,-1)".parse::<Dist>().is_err());
        assert!("gaussian(0)".parse::<Dist>().is_err());
        assert!("weibull(1)".parse::<Dist>().is_err());
        assert!("mixture(1.5,0,point(0))".parse::<Dist>().is_err());
        assert!("uniform(1,1)".parse::<Dist>().is_err());
        assert!("cantor(0)".parse::<Dist>().is_err());
        assert!("gaussian(0,1".parse::<Dist>().is_err());
    }

    #[test]
    fn closed_forms() {
        let u: Dist = "uniform(-1,1)".parse().unwrap();
        assert_eq!(u.cf(0.0), C64::new(1.0, 0.0));
        assert!((u.cf(2.0).re - 2f64.sin() / 2.0).abs() < 1e-15);
        let g: Dist = "gaussian(0,1)".parse().unwrap();
        let m: Dist = "mixture(0.3,0,gaussian(0,1))".parse().unwrap();
        for s in [0.0, 0.7, 3.0] {
            assert!((g.cf(s).re - (-s * s / 2.0).exp()).abs() < 1e-15);
            assert!((m.cf(s) - (g.cf(s) * 0.7 + 0.3)).norm() < 1e-15);
        }
    }

    #[test]
    fn cantor_cf_matches_support_points() {
        // direct sum over all 2^L support points at small L
        for levels in 1..=10u32 {
            let d = Dist::Cantor { levels };
            for s in [0.3, 2.0, 17.0] {
                let mut sum = 0.0;
                for mask in 0..(1u32 << levels) {
                    let x: f64 = (0..levels)
                        .map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 } * 3f64.powi(-(j as i32) - 1))
                        .sum();
                    sum += (s * x).cos();
                }
                sum /= (1u32 << levels) as f64;
                assert!((d.cf(s).re - sum).abs() < 1e-12, "L={levels} s={s}");
            }
        }
        // L=20 by the recursion φ_L(s) = cos(s/3)·φ_{L-1}(s/3)
        fn rec(l: u32, s: f64) -> f64 {
            if l == 0 {
                1.0
            } else {
                (s / 3.0).cos() * rec(l - 1, s / 3.0)
            }
        }
        let d = Dist::Cantor { levels: 20 };
        for s in [0.5, 5.0, 50.0] {
            assert!((d.cf(s).re - rec(20, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_moments_within_tolerance() {
        let n = 100_000;
        for (i, t) in [
            "gaussian(1,2)",
            "laplace(0.5)",
            "uniform(-1,3)",
            "mixture(0.3,2,gaussian(0,1))",
            "cantor(20)",
        ]
        .iter()
        .enumerate()
        {
            let d: Dist = t.parse().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (m, v) = d.moments().unwrap();
            assert!(
                (mean - m).abs() < 5.0 * v.sqrt() / (n as f64).sqrt(),
                "{t}: mean {mean}"
            );
            let fourth = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
            assert!(
                (var - v).abs() < 5.0 * ((fourth - v * v) / n as f64).sqrt(),
                "{t}: var {var}"
            );
        }
    }

    #[test]
    fn fejer_sampler_matches_cf() {
        let d = Dist::Fejer { w: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        for s in [0.5, 1.0, 1.5, 3.0] {
            let ecf = xs.iter().map(|x| (s * x).cos()).sum::<f64>() / n as f64;
            assert!((ecf - d.cf(s).re).abs() < 5.0 / (n as f64).sqrt(), "s={s}");
        }
    }

    #[test]
    fn product_cf_is_product() {
        let (fg, _) = make_grids(2, 16, 4.0).unwrap();
        let d: Dist = "laplace(1)".parse().unwrap();
        let f = product_cf(&d, &fg);
        for i in 0..fg.len() {
            let p = fg.point(i);
            assert!(
                (f.value(i).re - 1.0 / ((1.0 + p[0] * p[0]) * (1.0 + p[1] * p[1]))).abs() < 1e-15
            );
        }
    }
}
