//! Uniform symmetric grids, the quadrature-scaled transform pair and
//! pointwise algebra on sampled complex functions.
//!
//! Frequency and space grids come in pairs with `dx * ds * n = 2π` per axis.
//! Along each axis, array index `j` holds the point `(j - n/2) * step`, so the
//! origin sits at index `n/2` and the lowest index is `-n/2 * step`. The
//! forward transform uses the `e^{+isx}` kernel:
//!
//! ```text
//! F(s_j) = dx^d * Σ_m f(x_m) e^{i s_j · x_m}
//! f(x_m) = (ds / 2π)^d * Σ_j F(s_j) e^{-i s_j · x_m}
//! ```
//!
//! Functions are assumed negligible outside the space grid; aliasing from
//! truncation is the caller's responsibility.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub type C64 = Complex64;

/// Largest dimension supported by the grid machinery.
pub const MAX_DIM: usize = 3;

/// Default cap on the number of grid points (`n^d`).
pub const DEFAULT_POINT_CAP: usize = 1 << 24;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("points per dimension must be even and at least 8, got {0}")]
    BadPointCount(usize),
    #[error("dimension must be in 1..={MAX_DIM}, got {0}")]
    BadDimension(usize),
    #[error("grid extent must be positive and finite, got {0}")]
    BadExtent(f64),
    #[error("grid of {points} points exceeds the cap of {cap}")]
    TooLarge { points: usize, cap: usize },
    #[error("value count {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid functions live on different grids")]
    GridMismatch,
    #[error("expected a function on the {expected:?} grid")]
    WrongDomain { expected: Domain },
    #[error("hermitian claim violated: defect {defect:e} exceeds {bound:e}")]
    NotHermitian { defect: f64, bound: f64 },
    #[error("axis {axis} out of range for dimension {dim}")]
    BadAxis { axis: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Frequency,
    Space,
}

/// A uniform grid with `n` points per axis in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    step: f64,
    domain: Domain,
}

impl Grid {
    /// Rebuild a grid from its stored parameters (used when reading files).
    pub fn from_parts(dim: usize, n: usize, step: f64, domain: Domain) -> Result<Grid, GridError> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(GridError::BadExtent(step));
        }
        make_grids(dim, n, (n / 2) as f64 * step)?;
        Ok(Grid {
            dim,
            n,
            step,
            domain,
        })
    }
}

/// Build a compatible (frequency, space) grid pair.
pub fn make_grids(dim: usize, n: usize, s_max: f64) -> Result<(Grid, Grid), GridError> {
    make_grids_with_cap(dim, n, s_max, DEFAULT_POINT_CAP)
}

pub fn make_grids_with_cap(
    dim: usize,
    n: usize,
    s_max: f64,
    cap: usize,
) -> Result<(Grid, Grid), GridError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(GridError::BadDimension(dim));
    }
    if n < 8 || n % 2 != 0 {
        return Err(GridError::BadPointCount(n));
    }
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(GridError::BadExtent(s_max));
    }
    let points = n.checked_pow(dim as u32).ok_or(GridError::TooLarge {
        points: usize::MAX,
        cap,
    })?;
    if points > cap {
        return Err(GridError::TooLarge { points, cap });
    }
    let ds = s_max / (n / 2) as f64;
    let freq = Grid {
        dim,
        n,
        step: ds,
        domain: Domain::Frequency,
    };
    let space = freq.dual();
    Ok((freq, space))
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_frequency(&self) -> bool {
        self.domain == Domain::Frequency
    }

    /// `(n/2) * step`; the largest grid coordinate is one step below this.
    pub fn extent(&self) -> f64 {
        (self.n / 2) as f64 * self.step
    }

    /// Total number of points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The transform partner: spacing `2π / (n * step)` on the other domain.
    pub fn dual(&self) -> Grid {
        let domain = match self.domain {
            Domain::Frequency => Domain::Space,
            Domain::Space => Domain::Frequency,
        };
        Grid {
            dim: self.dim,
            n: self.n,
            step: 2.0 * PI / (self.n as f64 * self.step),
            domain,
        }
    }

    /// Volume element `step^d`.
    pub fn cell_volume(&self) -> f64 {
        self.step.powi(self.dim as i32)
    }

    /// Stride of `axis` in the row-major layout (axis 0 slowest).
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn origin_index(&self) -> usize {
        (0..self.dim).map(|a| (self.n / 2) * self.stride(a)).sum()
    }

    /// Signed integer offset of `index` along `axis` (coordinate = offset * step).
    pub fn offset(&self, index: usize, axis: usize) -> isize {
        let j = (index / self.stride(axis)) % self.n;
        j as isize - (self.n / 2) as isize
    }

    pub fn coord(&self, index: usize, axis: usize) -> f64 {
        self.offset(index, axis) as f64 * self.step
    }

    /// Coordinates of `index`, written into `out[..dim]`.
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        for (axis, slot) in out.iter_mut().enumerate().take(self.dim) {
            *slot = self.coord(index, axis);
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point_into(index, &mut p);
        p
    }

    pub fn norm(&self, index: usize) -> f64 {
        (0..self.dim)
            .map(|a| self.coord(index, a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Index with the given signed offsets, if it lies on the grid.
    pub fn index_of_offsets(&self, offsets: &[isize]) -> Option<usize> {
        let half = (self.n / 2) as isize;
        let mut idx = 0usize;
        for (axis, &o) in offsets.iter().enumerate().take(self.dim) {
            let j = o + half;
            if j < 0 || j >= self.n as isize {
                return None;
            }
            idx += j as usize * self.stride(axis);
        }
        Some(idx)
    }

    /// Nearest grid index to a coordinate vector, if inside the grid.
    pub fn nearest_index(&self, point: &[f64]) -> Option<usize> {
        let offsets: Vec<isize> = point
            .iter()
            .take(self.dim)
            .map(|&c| (c / self.step).round() as isize)
            .collect();
        self.index_of_offsets(&offsets)
    }

    /// Index of `-p`. The lowest row (`-n/2`) has no mirror on the grid.
    pub fn mirror_index(&self, index: usize) -> Option<usize> {
        let offsets: Vec<isize> = (0..self.dim).map(|a| -self.offset(index, a)).collect();
        self.index_of_offsets(&offsets)
    }

    /// Face neighbour of `index` along `axis` in direction `dir` (±1).
    pub fn neighbor(&self, index: usize, axis: usize, dir: isize) -> Option<usize> {
        let j = ((index / self.stride(axis)) % self.n) as isize + dir;
        if j < 0 || j >= self.n as isize {
            None
        } else {
            let s = self.stride(axis) as isize;
            Some((index as isize + dir * s) as usize)
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}

/// A complex function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Grid,
    values: Vec<C64>,
    hermitian: bool,
}

impl GridFn {
    /// Wrap sampled values. A `hermitian` claim is checked against the data.
    pub fn new(grid: Grid, values: Vec<C64>, hermitian: bool) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let f = GridFn {
            grid,
            values,
            hermitian,
        };
        if hermitian {
            let defect = f.hermitian_defect();
            let bound = HERMITIAN_TOL * f.sup_norm().max(f64::MIN_POSITIVE);
            if defect > bound {
                return Err(GridError::NotHermitian { defect, bound });
            }
        }
        Ok(f)
    }

    /// Sample `f` at every grid point. The hermitian flag is set when the
    /// samples satisfy the symmetry to tolerance.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> C64) -> Self {
        let mut p = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut p);
                f(&p)
            })
            .collect();
        let mut out = GridFn {
            grid: grid.clone(),
            values,
            hermitian: false,
        };
        out.hermitian = out.hermitian_defect() <= HERMITIAN_TOL * out.sup_norm();
        out
    }

    pub fn from_real_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |p| C64::new(f(p), 0.0))
    }

    pub fn zeros(grid: &Grid) -> Self {
        GridFn {
            grid: grid.clone(),
            values: vec![C64::new(0.0, 0.0); grid.len()],
            hermitian: true,
        }
    }

    pub fn constant(grid: &Grid, c: C64) -> Self {
        GridFn {
            grid: grid.clone(),
            values: vec![c; grid.len()],
            hermitian: c.im == 0.0,
        }
    }

    /// Rebuild with new values on the same grid, without a hermitian claim.
    pub(crate) fn with_values(&self, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), self.grid.len());
        GridFn {
            grid: self.grid.clone(),
            values,
            hermitian: false,
        }
    }

    /// Set the hermitian flag from the data.
    pub(crate) fn refresh_hermitian(mut self) -> Self {
        self.hermitian = self.hermitian_defect() <= HERMITIAN_TOL * self.sup_norm();
        self
    }

    pub(crate) fn set_hermitian_unchecked(mut self, hermitian: bool) -> Self {
        self.hermitian = hermitian;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn value(&self, index: usize) -> C64 {
        self.values[index]
    }

    pub fn at_origin(&self) -> C64 {
        self.values[self.grid.origin_index()]
    }

    /// Value at the nearest grid point to `point`.
    pub fn value_near(&self, point: &[f64]) -> Option<C64> {
        self.grid.nearest_index(point).map(|i| self.values[i])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |f(-p) - conj f(p)|` over points whose mirror is on the grid.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.grid.len())
            .filter_map(|i| {
                self.grid
                    .mirror_index(i)
                    .map(|m| (self.values[m] - self.values[i].conj()).norm())
            })
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> GridFn {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: C64) -> GridFn {
        let keep = self.hermitian && c.im == 0.0;
        self.map(|v| v * c).set_hermitian_unchecked(keep)
    }

    pub fn conj(&self) -> GridFn {
        let h = self.hermitian;
        self.map(|v| v.conj()).set_hermitian_unchecked(h)
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// Riemann-sum integral `step^d * Σ f`.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.grid.cell_volume()
    }
}

/// Binary pointwise operations on grid functions sharing a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseOp {
    Mul,
    /// Plain division; zeros in the divisor produce non-finite values.
    DivUnchecked,
    Add,
    Sub,
}

pub fn pointwise(op: PointwiseOp, a: &GridFn, b: &GridFn) -> Result<GridFn, GridError> {
    if a.grid != b.grid {
        return Err(GridError::GridMismatch);
    }
    let f: fn(C64, C64) -> C64 = match op {
        PointwiseOp::Mul => |x, y| x * y,
        PointwiseOp::DivUnchecked => |x, y| x / y,
        PointwiseOp::Add => |x, y| x + y,
        PointwiseOp::Sub => |x, y| x - y,
    };
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(GridFn {
        grid: a.grid.clone(),
        values,
        hermitian: a.hermitian && b.hermitian,
    })
}

impl GridFn {
    pub fn mul(&self, other: &GridFn) -> Result<GridFn, GridError> {
        pointwise(PointwiseOp::Mul, self, other)
    }

    pub fn add(&self, other: &GridFn) -> Result<GridFn, GridError> {
        pointwise(PointwiseOp::Add, self, other)
    }

    pub fn sub(&self, other: &GridFn) -> Result<GridFn, GridError> {
        pointwise(PointwiseOp::Sub, self, other)
    }
}

enum Direction {
    /// `e^{+2πi jk/n}`, used for the space → frequency map.
    Positive,
    Negative,
}

fn transform_axes(values: &mut [C64], grid: &Grid, dir: Direction) {
    let n = grid.points_per_dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = match dir {
        // rustfft's "inverse" is the unnormalised e^{+} kernel.
        Direction::Positive => planner.plan_fft_inverse(n),
        Direction::Negative => planner.plan_fft_forward(n),
    };
    let mut line = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        let outer = grid.len() / (n * stride);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = values[base + j * stride];
                }
                // centred ordering ↔ FFT ordering is a rotation by n/2
                line.rotate_left(n / 2);
                fft.process_with_scratch(&mut line, &mut scratch);
                line.rotate_left(n / 2);
                for (j, v) in line.iter().enumerate() {
                    values[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Space → frequency: `F(s) = dx^d Σ f(x) e^{i s·x}`.
pub fn forward_transform(f: &GridFn) -> Result<GridFn, GridError> {
    if f.grid.domain != Domain::Space {
        return Err(GridError::WrongDomain {
            expected: Domain::Space,
        });
    }
    let mut values = f.values.clone();
    transform_axes(&mut values, &f.grid, Direction::Positive);
    let scale = f.grid.cell_volume();
    values.iter_mut().for_each(|v| *v *= scale);
    let real_input = f.values.iter().all(|v| v.im == 0.0);
    Ok(GridFn {
        grid: f.grid.dual(),
        values,
        hermitian: real_input,
    })
}

/// Frequency → space: `f(x) = (ds/2π)^d Σ F(s) e^{-i s·x}`.
pub fn inverse_transform(phi: &GridFn) -> Result<GridFn, GridError> {
    if phi.grid.domain != Domain::Frequency {
        return Err(GridError::WrongDomain {
            expected: Domain::Frequency,
        });
    }
    let mut values = phi.values.clone();
    transform_axes(&mut values, &phi.grid, Direction::Negative);
    let scale = (phi.grid.step / (2.0 * PI)).powi(phi.grid.dim as i32);
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(GridFn {
        grid: phi.grid.dual(),
        values,
        hermitian: false,
    })
}

/// Second-order finite-difference partial derivative along `axis`:
/// central differences inside, one-sided three-point formulas at the edges.
pub fn grid_derivative(f: &GridFn, axis: usize) -> Result<GridFn, GridError> {
    let grid = &f.grid;
    if axis >= grid.dim() {
        return Err(GridError::BadAxis {
            axis,
            dim: grid.dim(),
        });
    }
    let n = grid.points_per_dim();
    let stride = grid.stride(axis);
    let h = grid.step();
    let v = &f.values;
    let out = (0..grid.len())
        .map(|i| {
            let j = (i / stride) % n;
            if j == 0 {
                (-3.0 * v[i] + 4.0 * v[i + stride] - v[i + 2 * stride]) / (2.0 * h)
            } else if j == n - 1 {
                (3.0 * v[i] - 4.0 * v[i - stride] + v[i - 2 * stride]) / (2.0 * h)
            } else {
                (v[i + stride] - v[i - stride]) / (2.0 * h)
            }
        })
        .collect();
    Ok(f.with_values(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn grid_pair_spacing() {
        let (fg, sg) = make_grids(1, 8, 4.0).unwrap();
        assert_eq!(fg.step(), 1.0);
        assert!((sg.step() - 2.0 * PI / 8.0).abs() < 1e-15);
        let (fg, sg) = make_grids(2, 16, 8.0).unwrap();
        assert_eq!(fg.step(), 1.0);
        assert_eq!(fg.len(), 256);
        assert!((sg.step() - 2.0 * PI / 16.0).abs() < 1e-15);
        assert!((fg.step() * sg.step() * 16.0 - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert_eq!(make_grids(1, 7, 4.0), Err(GridError::BadPointCount(7)));
        assert_eq!(make_grids(1, 6, 4.0), Err(GridError::BadPointCount(6)));
        assert!(matches!(
            make_grids(4, 8, 4.0),
            Err(GridError::BadDimension(4))
        ));
        assert!(matches!(
            make_grids(1, 8, -1.0),
            Err(GridError::BadExtent(_))
        ));
        assert!(matches!(
            make_grids_with_cap(3, 512, 4.0, 1 << 20),
            Err(GridError::TooLarge { .. })
        ));
    }

    #[test]
    fn origin_and_mirror() {
        let (g, _) = make_grids(2, 8, 4.0).unwrap();
        let o = g.origin_index();
        assert_eq!(g.point(o), vec![0.0, 0.0]);
        let i = g.index_of_offsets(&[1, -3]).unwrap();
        let m = g.mirror_index(i).unwrap();
        assert_eq!(g.point(m), vec![-1.0, 3.0]);
        let low = g.index_of_offsets(&[-4, 0]).unwrap();
        assert_eq!(g.mirror_index(low), None);
    }

    #[test]
    fn delta_transforms_to_one() {
        let (_, sg) = make_grids(1, 64, 8.0).unwrap();
        let mut vals = vec![c(0.0); sg.len()];
        vals[sg.origin_index()] = c(1.0 / sg.step());
        let f = GridFn::new(sg, vals, false).unwrap();
        let phi = forward_transform(&f).unwrap();
        for v in phi.values() {
            assert!((v - c(1.0)).norm() < 1e-13);
        }
        assert!(phi.is_hermitian());
    }

    #[test]
    fn constant_cf_inverts_to_unit_spike() {
        let (fg, _) = make_grids(1, 256, 16.0).unwrap();
        let one = GridFn::constant(&fg, c(1.0));
        let f = inverse_transform(&one).unwrap();
        let mass = f.integral();
        assert!((mass - c(1.0)).norm() < 1e-10);
        let o = f.grid().origin_index();
        for (i, v) in f.values().iter().enumerate() {
            if i != o {
                assert!(v.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_pair() {
        // N=512 over [-20, 20] in space
        let n = 512;
        let s_max = (n / 2) as f64 * 2.0 * PI / 40.0;
        let (fg, sg) = make_grids(1, n, s_max).unwrap();
        assert!((sg.extent() - 20.0).abs() < 1e-12);
        let dens = GridFn::from_real_fn(&sg, |x| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt());
        let phi = forward_transform(&dens).unwrap();
        let truth = GridFn::from_real_fn(&fg, |s| (-0.5 * s[0] * s[0]).exp());
        let err = phi.sub(&truth).unwrap().sup_norm();
        assert!(err < 1e-10, "sup error {err}");
        let back = inverse_transform(&truth).unwrap();
        let err = back.sub(&dens).unwrap().sup_norm();
        assert!(err < 1e-10, "sup error {err}");
    }

    #[test]
    fn pointwise_algebra() {
        let (fg, _) = make_grids(1, 64, 8.0).unwrap();
        let a = GridFn::from_real_fn(&fg, |s| (-s[0] * s[0] / 4.0).exp());
        let one = GridFn::constant(&fg, c(1.0));
        assert_eq!(a.mul(&one).unwrap().values(), a.values());
        let sq = a.mul(&a).unwrap();
        let truth = GridFn::from_real_fn(&fg, |s| (-s[0] * s[0] / 2.0).exp());
        assert!(sq.sub(&truth).unwrap().sup_norm() < 1e-15);
        assert!(sq.is_hermitian());
        let b = GridFn::from_real_fn(&fg, |s| 1.0 + s[0]);
        let ab = a.mul(&b).unwrap();
        let back = pointwise(PointwiseOp::DivUnchecked, &ab, &b).unwrap();
        for i in 0..fg.len() {
            if b.value(i).norm() > 1e-12 {
                assert!((back.value(i) - a.value(i)).norm() <= 1e-15 * a.value(i).norm().max(1.0));
            }
        }
        let (fg2, _) = make_grids(1, 32, 8.0).unwrap();
        let other = GridFn::constant(&fg2, c(1.0));
        assert_eq!(a.mul(&other), Err(GridError::GridMismatch));
    }

    #[test]
    fn derivative_cases() {
        let (fg, _) = make_grids(1, 128, 8.0).unwrap();
        let lin = GridFn::from_real_fn(&fg, |s| s[0]);
        let d = grid_derivative(&lin, 0).unwrap();
        for v in d.values() {
            assert!((v - c(1.0)).norm() < 1e-12);
        }
        let k = GridFn::constant(&fg, C64::new(2.0, -1.0));
        assert!(grid_derivative(&k, 0).unwrap().sup_norm() < 1e-12);
        let g = GridFn::from_real_fn(&fg, |s| (-0.5 * s[0] * s[0]).exp());
        let dg = grid_derivative(&g, 0).unwrap();
        let truth = GridFn::from_real_fn(&fg, |s| -s[0] * (-0.5 * s[0] * s[0]).exp());
        let h = fg.step();
        assert!(dg.sub(&truth).unwrap().sup_norm() < h * h);
        assert!(matches!(
            grid_derivative(&g, 1),
            Err(GridError::BadAxis { .. })
        ));
    }

    #[test]
    fn hermitian_claim_is_checked() {
        let (fg, _) = make_grids(1, 16, 4.0).unwrap();
        let odd: Vec<C64> = (0..16).map(|i| c(i as f64)).collect();
        assert!(matches!(
            GridFn::new(fg.clone(), odd, true),
            Err(GridError::NotHermitian { .. })
        ));
        let f = GridFn::from_fn(&fg, |s| C64::new(s[0].cos(), s[0].sin()));
        assert!(f.is_hermitian());
    }
}
