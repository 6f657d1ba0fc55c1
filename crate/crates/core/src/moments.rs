//! Samples and the frequency-domain moment functions built from them:
//! empirical characteristic functions, weighted ECFs, CF derivatives and a
//! Nadaraya–Watson estimate of conditional means on the space grid.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{forward_transform, Grid, GridFn, C64};

/// Samples per work unit in parallel reductions. Fixed so results do not
/// depend on the number of worker threads.
const CHUNK: usize = 2048;

/// Default minimum effective observation count for a kernel-regression node.
pub const MIN_EFFECTIVE_COUNT: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentsError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("non-finite value in column {column} at row {row}")]
    NonFinite { column: &'static str, row: usize },
    #[error("column {column} has {got} values, expected {expected}")]
    LengthMismatch {
        column: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sample dimension {sample} does not match grid dimension {grid}")]
    DimensionMismatch { sample: usize, grid: usize },
    #[error("sample has no {0} column")]
    MissingColumn(&'static str),
    #[error("axis {axis} out of range for dimension {dim}")]
    BadAxis { axis: usize, dim: usize },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("every grid node has too little data for kernel regression")]
    AllFlagged,
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Observed data: `n` rows of a `d`-vector `z`, optional second measurement
/// `x` (also `d` columns), optional scalar response `y` and extra response `y2`.
/// Vector columns are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    dim: usize,
    z: Vec<f64>,
    x: Option<Vec<f64>>,
    y: Option<Vec<f64>>,
    y2: Option<Vec<f64>>,
}

fn check_finite(column: &'static str, v: &[f64]) -> Result<(), MomentsError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(row) => Err(MomentsError::NonFinite { column, row }),
        None => Ok(()),
    }
}

impl Sample {
    pub fn new(
        dim: usize,
        z: Vec<f64>,
        x: Option<Vec<f64>>,
        y: Option<Vec<f64>>,
        y2: Option<Vec<f64>>,
    ) -> Result<Self, MomentsError> {
        if dim == 0 || z.len() % dim != 0 {
            return Err(MomentsError::LengthMismatch {
                column: "z",
                expected: dim.max(1) * (z.len() / dim.max(1)),
                got: z.len(),
            });
        }
        let n = z.len() / dim;
        if n < 2 {
            return Err(MomentsError::TooFewObservations(n));
        }
        check_finite("z", &z)?;
        if let Some(x) = &x {
            if x.len() != n * dim {
                return Err(MomentsError::LengthMismatch {
                    column: "x",
                    expected: n * dim,
                    got: x.len(),
                });
            }
            check_finite("x", x)?;
        }
        for (name, col) in [("y", &y), ("y2", &y2)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(MomentsError::LengthMismatch {
                        column: name,
                        expected: n,
                        got: c.len(),
                    });
                }
                check_finite(name, c)?;
            }
        }
        Ok(Sample { dim, z, x, y, y2 })
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x(&self) -> Option<&[f64]> {
        self.x.as_deref()
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn y2(&self) -> Option<&[f64]> {
        self.y2.as_deref()
    }

    pub fn require_x(&self) -> Result<&[f64], MomentsError> {
        self.x().ok_or(MomentsError::MissingColumn("x"))
    }

    pub fn require_y(&self) -> Result<&[f64], MomentsError> {
        self.y().ok_or(MomentsError::MissingColumn("y"))
    }

    /// Column `k` of `z`.
    pub fn z_col(&self, k: usize) -> Vec<f64> {
        self.z.iter().skip(k).step_by(self.dim).copied().collect()
    }
}

/// Uniform fluctuation scale of an ECF from `n` draws over `points` grid
/// nodes: `n^{-1/2} sqrt(2 ln points)`.
pub fn ecf_noise_scale(n: usize, points: usize) -> f64 {
    (2.0 * (points.max(2) as f64).ln()).sqrt() / (n as f64).sqrt()
}

/// Per-axis phase table `e^{i s_j z}` for all grid offsets, built from powers
/// of `e^{i ds z}` so that the origin is exactly 1 and the table is exactly
/// conjugate-symmetric.
fn phase_table(z: f64, ds: f64, n: usize, out: &mut [C64]) {
    let half = n / 2;
    let step = C64::from_polar(1.0, ds * z);
    let mut w = C64::new(1.0, 0.0);
    out[half] = w;
    for k in 1..=half {
        w *= step;
        if k < half {
            out[half + k] = w;
        }
        out[half - k] = w.conj();
    }
}

/// `Σ_j c_j e^{i s·z_j}` for each weight set, scaled by `1/n`.
fn weighted_sums(
    points: &[f64],
    dim: usize,
    weights: &[Option<&[f64]>],
    grid: &Grid,
) -> Vec<Vec<C64>> {
    let n_pts = points.len() / dim;
    let n = grid.points_per_dim();
    let len = grid.len();
    let ds = grid.step();
    let k = weights.len();
    let partials: Vec<Vec<Vec<C64>>> = (0..n_pts.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(n_pts);
            let mut acc = vec![vec![C64::new(0.0, 0.0); len]; k];
            let mut tables = vec![C64::new(0.0, 0.0); n * dim];
            let mut prod = vec![C64::new(0.0, 0.0); len];
            for row in lo..hi {
                for a in 0..dim {
                    phase_table(
                        points[row * dim + a],
                        ds,
                        n,
                        &mut tables[a * n..(a + 1) * n],
                    );
                }
                let phases: &[C64] = if dim == 1 {
                    &tables[..n]
                } else {
                    outer_product(&tables, dim, n, &mut prod);
                    &prod
                };
                for (acc_w, w) in acc.iter_mut().zip(weights) {
                    let c = w.map_or(1.0, |w| w[row]);
                    if c == 0.0 {
                        continue;
                    }
                    for (a, p) in acc_w.iter_mut().zip(phases) {
                        *a += p * c;
                    }
                }
            }
            acc
        })
        .collect();
    let inv_n = 1.0 / n_pts as f64;
    let mut out = vec![vec![C64::new(0.0, 0.0); len]; k];
    for part in &partials {
        for (o, p) in out.iter_mut().zip(part) {
            for (a, b) in o.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    for o in &mut out {
        o.iter_mut().for_each(|v| *v *= inv_n);
    }
    out
}

fn outer_product(tables: &[C64], dim: usize, n: usize, out: &mut [C64]) {
    out[..n].copy_from_slice(&tables[..n]);
    let mut size = n;
    for a in 1..dim {
        let t = &tables[a * n..(a + 1) * n];
        for i in (0..size).rev() {
            let base = out[i];
            for (j, tj) in t.iter().enumerate() {
                out[i * n + j] = base * tj;
            }
        }
        size *= n;
    }
}

fn check_points(points: &[f64], grid: &Grid) -> Result<usize, MomentsError> {
    let dim = grid.dim();
    if points.len() % dim != 0 {
        return Err(MomentsError::LengthMismatch {
            column: "z",
            expected: dim * (points.len() / dim),
            got: points.len(),
        });
    }
    let n = points.len() / dim;
    if n < 2 {
        return Err(MomentsError::TooFewObservations(n));
    }
    check_finite("z", points)?;
    Ok(n)
}

fn finish(grid: &Grid, mut values: Vec<C64>, origin: f64) -> GridFn {
    values[grid.origin_index()] = C64::new(origin, 0.0);
    GridFn::new(grid.clone(), values, false)
        .expect("length matches grid")
        .set_hermitian_unchecked(true)
}

/// Empirical characteristic function `n^{-1} Σ_j e^{i s·z_j}` of row-major
/// points with `grid.dim()` columns. The origin value is exactly 1.
pub fn ecf(points: &[f64], grid: &Grid) -> Result<GridFn, MomentsError> {
    check_points(points, grid)?;
    let v = weighted_sums(points, grid.dim(), &[None], grid).remove(0);
    Ok(finish(grid, v, 1.0))
}

/// `n^{-1} Σ_j c_j e^{i s·z_j}`: the transform of a density-weighted
/// conditional mean of `c` given `z`.
pub fn weighted_ecf(weights: &[f64], points: &[f64], grid: &Grid) -> Result<GridFn, MomentsError> {
    Ok(weighted_ecfs(&[weights], points, grid)?.remove(0))
}

/// Several weighted ECFs over the same points, sharing the phase tables.
pub fn weighted_ecfs(
    weights: &[&[f64]],
    points: &[f64],
    grid: &Grid,
) -> Result<Vec<GridFn>, MomentsError> {
    let n = check_points(points, grid)?;
    for w in weights {
        if w.len() != n {
            return Err(MomentsError::LengthMismatch {
                column: "weights",
                expected: n,
                got: w.len(),
            });
        }
        check_finite("weights", w)?;
    }
    let sets: Vec<Option<&[f64]>> = weights.iter().map(|w| Some(*w)).collect();
    let sums = weighted_sums(points, grid.dim(), &sets, grid);
    Ok(sums
        .into_iter()
        .zip(weights)
        .map(|(v, w)| {
            let mean = w.iter().sum::<f64>() / n as f64;
            finish(grid, v, mean)
        })
        .collect())
}

/// Sign convention for `ε_k = sign · i · Ft(w_k)`.
///
/// With `Ft(ψ)(s) = ∫ψ(x) e^{isx} dx`, the identity `(φ_x*)'_k φ_u = ε_k`
/// holds for [`EpsilonSign::Plus`]; this is checked against a quadrature
/// oracle in the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpsilonSign {
    #[default]
    Plus,
    Minus,
}

impl EpsilonSign {
    fn factor(self) -> C64 {
        match self {
            EpsilonSign::Plus => C64::new(0.0, 1.0),
            EpsilonSign::Minus => C64::new(0.0, -1.0),
        }
    }
}

fn times_i(f: GridFn, factor: C64) -> GridFn {
    // i·(hermitian) is anti-hermitian
    f.scale(factor).set_hermitian_unchecked(false)
}

fn check_axis(k: usize, dim: usize) -> Result<(), MomentsError> {
    if k >= dim {
        Err(MomentsError::BadAxis { axis: k, dim })
    } else {
        Ok(())
    }
}

/// `ε̂_k = sign · i · n^{-1} Σ_j x_{jk} e^{i s·z_j}`.
pub fn epsilon_k(
    sample: &Sample,
    k: usize,
    grid: &Grid,
    sign: EpsilonSign,
) -> Result<GridFn, MomentsError> {
    check_axis(k, sample.dim())?;
    let x = sample.require_x()?;
    let xk: Vec<f64> = x.iter().skip(k).step_by(sample.dim()).copied().collect();
    let w = weighted_ecf(&xk, sample.z(), grid)?;
    Ok(times_i(w, sign.factor()))
}

/// Exact derivative of the ECF: `i · n^{-1} Σ_j z_{jk} e^{i s·z_j}`.
pub fn ecf_derivative(sample: &Sample, k: usize, grid: &Grid) -> Result<GridFn, MomentsError> {
    check_axis(k, sample.dim())?;
    let zk = sample.z_col(k);
    let w = weighted_ecf(&zk, sample.z(), grid)?;
    Ok(times_i(w, C64::new(0.0, 1.0)))
}

/// Silverman's rule-of-thumb bandwidth `1.06 σ̂ n^{-1/(d+4)}` with `σ̂`
/// averaged over the columns.
pub fn silverman_bandwidth(points: &[f64], dim: usize) -> f64 {
    let n = points.len() / dim;
    let mut sd = 0.0;
    for a in 0..dim {
        let col = points.iter().skip(a).step_by(dim);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        sd += var.sqrt();
    }
    sd /= dim as f64;
    1.06 * sd * (n as f64).powf(-1.0 / (dim as f64 + 4.0))
}

/// Kernel sums at every node of a space grid: `(Σ K, Σ K·c)` for a Gaussian
/// product kernel with bandwidth `h`, truncated at 8 bandwidths.
fn kernel_sums(points: &[f64], weights: &[f64], grid: &Grid, h: f64) -> Vec<(f64, f64)> {
    let dim = grid.dim();
    let n = points.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a * dim].total_cmp(&points[b * dim]));
    let lead: Vec<f64> = order.iter().map(|&r| points[r * dim]).collect();
    let reach = 8.0 * h;
    let inv2h2 = 0.5 / (h * h);
    (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let p = grid.point(node);
            let lo = lead.partition_point(|&v| v < p[0] - reach);
            let hi = lead.partition_point(|&v| v <= p[0] + reach);
            let (mut s0, mut s1) = (0.0, 0.0);
            for &row in &order[lo..hi] {
                let mut r2 = 0.0;
                for (a, pa) in p.iter().enumerate() {
                    r2 += (points[row * dim + a] - pa).powi(2);
                }
                if r2 > reach * reach {
                    continue;
                }
                let k = (-r2 * inv2h2).exp();
                s0 += k;
                s1 += k * weights[row];
            }
            (s0, s1)
        })
        .collect()
}

/// Nadaraya–Watson estimate of `E(y|z)` on a space grid.
#[derive(Debug, Clone)]
pub struct ConditionalMean {
    /// Estimates at every node; flagged nodes hold 0.
    pub values: GridFn,
    /// Nodes with fewer than the minimum effective number of observations.
    pub flagged: Vec<bool>,
    pub bandwidth: f64,
}

/// Gaussian-kernel regression of `y` on `z`, evaluated at the nodes of
/// `space_grid`. Nodes with effective count `Σ K < min_effective` are flagged
/// and set to zero.
pub fn conditional_mean_on_grid(
    points: &[f64],
    y: &[f64],
    space_grid: &Grid,
    bandwidth: f64,
) -> Result<ConditionalMean, MomentsError> {
    conditional_mean_with_floor(points, y, space_grid, bandwidth, MIN_EFFECTIVE_COUNT)
}

pub fn conditional_mean_with_floor(
    points: &[f64],
    y: &[f64],
    space_grid: &Grid,
    bandwidth: f64,
    min_effective: f64,
) -> Result<ConditionalMean, MomentsError> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(MomentsError::BadBandwidth(bandwidth));
    }
    let n = check_points(points, space_grid)?;
    if y.len() != n {
        return Err(MomentsError::LengthMismatch {
            column: "y",
            expected: n,
            got: y.len(),
        });
    }
    check_finite("y", y)?;
    let sums = kernel_sums(points, y, space_grid, bandwidth);
    let mut flagged = vec![false; sums.len()];
    let mut values = Vec::with_capacity(sums.len());
    for (i, &(s0, s1)) in sums.iter().enumerate() {
        if s0 < min_effective {
            flagged[i] = true;
            values.push(C64::new(0.0, 0.0));
        } else {
            values.push(C64::new(s1 / s0, 0.0));
        }
    }
    if flagged.iter().all(|&f| f) {
        return Err(MomentsError::AllFlagged);
    }
    let values = GridFn::new(space_grid.clone(), values, false).expect("length matches grid");
    Ok(ConditionalMean {
        values,
        flagged,
        bandwidth,
    })
}

/// Kernel estimate of the density-weighted mean `E(c | z) f_z(z)`,
/// i.e. `n^{-1} Σ_j c_j K_h(z - z_j)` with a normalised Gaussian kernel.
pub fn weighted_density_on_grid(
    weights: &[f64],
    points: &[f64],
    space_grid: &Grid,
    bandwidth: f64,
) -> Result<GridFn, MomentsError> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(MomentsError::BadBandwidth(bandwidth));
    }
    let n = check_points(points, space_grid)?;
    if weights.len() != n {
        return Err(MomentsError::LengthMismatch {
            column: "weights",
            expected: n,
            got: weights.len(),
        });
    }
    check_finite("weights", weights)?;
    let dim = space_grid.dim() as i32;
    let norm = 1.0 / (n as f64 * ((2.0 * std::f64::consts::PI).sqrt() * bandwidth).powi(dim));
    let values = kernel_sums(points, weights, space_grid, bandwidth)
        .into_iter()
        .map(|(_, s1)| C64::new(s1 * norm, 0.0))
        .collect();
    Ok(GridFn::new(space_grid.clone(), values, false).expect("length matches grid"))
}

/// Known functions of the observables, as consumed by the solvers.
///
/// Which fields are required depends on the model; the constructors below
/// fill the set each model family needs.
#[derive(Debug, Clone)]
pub struct MomentFns {
    /// CF of `z`.
    pub phi_z: GridFn,
    /// `Ft(w)`, the transform of the density-weighted response mean.
    pub eps: Option<GridFn>,
    /// `ε_k = i·Ft(w_k)` for each axis.
    pub eps_k: Option<Vec<GridFn>>,
    /// `(φ_z)'_k`.
    pub dphi_z_k: Option<Vec<GridFn>>,
    /// `ε'_k`, the partial derivatives of `eps`.
    pub deps_k: Option<Vec<GridFn>>,
    /// CF of the second measurement `x`.
    pub phi_x: Option<GridFn>,
    /// CF of `z - x`.
    pub phi_zx: Option<GridFn>,
    /// `i·E[(x_k - E x_k) e^{is·(x-z)}] = (φ_{u_x})'_k φ_{-u}`.
    pub eps_diff_k: Option<Vec<GridFn>>,
    /// Partial derivatives of the CF of `x - z`.
    pub dphi_diff_k: Option<Vec<GridFn>>,
    /// Sample size behind the estimates; `None` for exact inputs.
    pub n: Option<usize>,
}

impl MomentFns {
    pub fn new(phi_z: GridFn) -> Self {
        MomentFns {
            phi_z,
            eps: None,
            eps_k: None,
            dphi_z_k: None,
            deps_k: None,
            phi_x: None,
            phi_zx: None,
            eps_diff_k: None,
            dphi_diff_k: None,
            n: None,
        }
    }

    /// Moments for the two-measurement models (3 and 4): `φ_z`, `ε_k`,
    /// `(φ_z)'_k` and `φ_x`.
    pub fn two_measurements(sample: &Sample, grid: &Grid) -> Result<Self, MomentsError> {
        check_dims(sample, grid)?;
        let dim = sample.dim();
        let x = sample.require_x()?;
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            weights.push(x.iter().skip(k).step_by(dim).copied().collect());
        }
        for k in 0..dim {
            weights.push(sample.z_col(k));
        }
        let mut sets: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
        let ones = vec![1.0; sample.len()];
        sets.push(&ones);
        let mut fns = weighted_ecfs(&sets, sample.z(), grid)?;
        let phi_z = fns.pop().expect("ones weight set");
        let i = C64::new(0.0, 1.0);
        let dphi: Vec<GridFn> = fns
            .split_off(dim)
            .into_iter()
            .map(|f| times_i(f, i))
            .collect();
        let eps: Vec<GridFn> = fns.into_iter().map(|f| times_i(f, i)).collect();
        let mut m = MomentFns::new(phi_z);
        m.eps_k = Some(eps);
        m.dphi_z_k = Some(dphi);
        m.phi_x = Some(ecf(x, grid)?);
        m.n = Some(sample.len());
        Ok(m)
    }

    /// Adds the difference-based moments used by the alternative route for
    /// model 4: `φ_{z-x}`, centred-`x` weighted moments of `x - z` and the
    /// derivative of the CF of `x - z`.
    pub fn with_difference(mut self, sample: &Sample, grid: &Grid) -> Result<Self, MomentsError> {
        check_dims(sample, grid)?;
        let dim = sample.dim();
        let x = sample.require_x()?;
        let diff: Vec<f64> = x.iter().zip(sample.z()).map(|(a, b)| a - b).collect();
        let n = sample.len();
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            let col: Vec<f64> = x.iter().skip(k).step_by(dim).copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            weights.push(col.into_iter().map(|v| v - mean).collect());
        }
        for k in 0..dim {
            weights.push(diff.iter().skip(k).step_by(dim).copied().collect());
        }
        let sets: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
        let mut fns = weighted_ecfs(&sets, &diff, grid)?;
        let i = C64::new(0.0, 1.0);
        let ddiff: Vec<GridFn> = fns
            .split_off(dim)
            .into_iter()
            .map(|f| times_i(f, i))
            .collect();
        let eps_diff: Vec<GridFn> = fns.into_iter().map(|f| times_i(f, i)).collect();
        // CF of z - x is the conjugate of the CF of x - z
        self.phi_zx = Some(ecf(&diff, grid)?.conj());
        self.eps_diff_k = Some(eps_diff);
        self.dphi_diff_k = Some(ddiff);
        Ok(self)
    }

    /// Moments for regression with classical error and a second measurement:
    /// `φ_z`, `ε = Ft(w)` with weights `y`, `ε_k = i·Ft(w_k)` with weights
    /// `x_k·y`, and `ε'_k` with weights `z_k·y`.
    pub fn regression(sample: &Sample, grid: &Grid) -> Result<Self, MomentsError> {
        check_dims(sample, grid)?;
        let dim = sample.dim();
        let x = sample.require_x()?;
        let y = sample.require_y()?;
        let mut weights: Vec<Vec<f64>> = vec![y.to_vec()];
        for k in 0..dim {
            weights.push(
                x.iter()
                    .skip(k)
                    .step_by(dim)
                    .zip(y)
                    .map(|(a, b)| a * b)
                    .collect(),
            );
        }
        for k in 0..dim {
            weights.push(sample.z_col(k).iter().zip(y).map(|(a, b)| a * b).collect());
        }
        let mut sets: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
        let ones = vec![1.0; sample.len()];
        sets.push(&ones);
        let mut fns = weighted_ecfs(&sets, sample.z(), grid)?;
        let phi_z = fns.pop().expect("ones weight set");
        let i = C64::new(0.0, 1.0);
        let deps: Vec<GridFn> = fns
            .split_off(1 + dim)
            .into_iter()
            .map(|f| times_i(f, i))
            .collect();
        let eps_k: Vec<GridFn> = fns
            .split_off(1)
            .into_iter()
            .map(|f| times_i(f, i))
            .collect();
        let eps = fns.pop().expect("y weight set");
        let mut m = MomentFns::new(phi_z);
        m.eps = Some(eps);
        m.eps_k = Some(eps_k);
        m.deps_k = Some(deps);
        m.n = Some(sample.len());
        Ok(m)
    }

    /// Moments for regression with Berkson-type instruments: `w = E(y|z)` and
    /// `w_k = E(x_k y|z)` by kernel regression on the dual space grid, then
    /// `ε = Ft(w)`, `ε_k = i·Ft(w_k)` and `ε'_k = i·Ft(z_k w)`.
    /// Nodes without enough data contribute zero.
    pub fn berkson(sample: &Sample, grid: &Grid, bandwidth: f64) -> Result<Self, MomentsError> {
        check_dims(sample, grid)?;
        let dim = sample.dim();
        let x = sample.require_x()?;
        let y = sample.require_y()?;
        let space = grid.dual();
        let w = conditional_mean_on_grid(sample.z(), y, &space, bandwidth)?.values;
        let i = C64::new(0.0, 1.0);
        let mut eps_k = Vec::with_capacity(dim);
        let mut deps_k = Vec::with_capacity(dim);
        for k in 0..dim {
            let xy: Vec<f64> = x
                .iter()
                .skip(k)
                .step_by(dim)
                .zip(y)
                .map(|(a, b)| a * b)
                .collect();
            let wk = conditional_mean_on_grid(sample.z(), &xy, &space, bandwidth)?.values;
            eps_k.push(times_i(forward_transform(&wk)?, i));
            let zw = w.with_values(
                (0..space.len())
                    .map(|j| w.value(j) * space.coord(j, k))
                    .collect(),
            );
            deps_k.push(times_i(forward_transform(&zw)?, i));
        }
        let mut m = MomentFns::new(ecf(sample.z(), grid)?);
        m.eps = Some(forward_transform(&w)?);
        m.eps_k = Some(eps_k);
        m.deps_k = Some(deps_k);
        m.n = Some(sample.len());
        Ok(m)
    }

    /// ECF noise scale for these moments, or `None` for exact inputs.
    pub fn noise_scale(&self) -> Option<f64> {
        self.n.map(|n| ecf_noise_scale(n, self.phi_z.grid().len()))
    }
}

fn check_dims(sample: &Sample, grid: &Grid) -> Result<(), MomentsError> {
    if sample.dim() != grid.dim() {
        Err(MomentsError::DimensionMismatch {
            sample: sample.dim(),
            grid: grid.dim(),
        })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grid_derivative, make_grids};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Composite Simpson rule on [a, b] with `m` (even) panels.
    fn simpson(f: impl Fn(f64) -> C64, a: f64, b: f64, m: usize) -> C64 {
        let h = (b - a) / m as f64;
        let mut acc = f(a) + f(b);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(a + i as f64 * h) * w;
        }
        acc * (h / 3.0)
    }

    fn gauss_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn point_mass_and_two_point() {
        let (fg, _) = make_grids(1, 64, 8.0).unwrap();
        let f = ecf(&[0.0; 10], &fg).unwrap();
        for v in f.values() {
            assert_eq!(*v, C64::new(1.0, 0.0));
        }
        let pm: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let f = ecf(&pm, &fg).unwrap();
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            assert!((f.value(i) - C64::new(s.cos(), 0.0)).norm() < 1e-13);
        }
        assert!(f.is_hermitian());
    }

    #[test]
    fn ecf_rejects_bad_input() {
        let (fg, _) = make_grids(1, 16, 4.0).unwrap();
        assert_eq!(
            ecf(&[1.0], &fg).unwrap_err(),
            MomentsError::TooFewObservations(1)
        );
        assert!(matches!(
            ecf(&[1.0, f64::NAN], &fg),
            Err(MomentsError::NonFinite { .. })
        ));
        assert!(matches!(
            weighted_ecf(&[1.0], &[0.0, 1.0], &fg),
            Err(MomentsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_ecf_monte_carlo() {
        let (fg, _) = make_grids(1, 256, 16.0).unwrap();
        let z = normals(100_000, 7);
        let f = ecf(&z, &fg).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            if s.abs() <= 4.0 {
                worst = worst.max((f.value(i) - C64::new((-0.5 * s * s).exp(), 0.0)).norm());
            }
        }
        // observed 0.0048 with this seed
        assert!(worst < 0.02, "sup error {worst}");
        assert_eq!(f.at_origin(), C64::new(1.0, 0.0));
        assert!(f.sup_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn weighted_ecf_basics() {
        let (fg, _) = make_grids(1, 32, 6.0).unwrap();
        let z = normals(500, 3);
        let ones = vec![1.0; 500];
        let a = ecf(&z, &fg).unwrap();
        let b = weighted_ecf(&ones, &z, &fg).unwrap();
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-14);
        let zero = weighted_ecf(&vec![0.0; 500], &z, &fg).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn epsilon_sign_matches_quadrature_oracle() {
        // x* ~ N(0,1), u ~ N(0,1), x = x* + u_x with E(u_x | x*, u) = 0.
        // Oracle: E[x e^{isz}] = (∫ t e^{ist} f(t) dt) · φ_u(s) by Simpson.
        // Claimed identity: sign·i·E[x e^{isz}] = (φ_x*)'(s) φ_u(s) = -s e^{-s²}.
        for &s in &[-2.5, -1.0, 0.3, 1.7, 3.0] {
            let m1 = simpson(
                |t| C64::from_polar(t * gauss_pdf(t), s * t),
                -12.0,
                12.0,
                4000,
            );
            let joint = m1 * (-0.5 * s * s).exp();
            let plus = C64::new(0.0, 1.0) * joint;
            let target = C64::new(-s * (-s * s).exp(), 0.0);
            assert!((plus - target).norm() < 1e-10, "s={s}: {plus} vs {target}");
            let minus = C64::new(0.0, -1.0) * joint;
            if s != 0.0 {
                assert!((minus - target).norm() > target.norm());
            }
        }
    }

    #[test]
    fn epsilon_k_sampled_and_edge_cases() {
        let (fg, _) = make_grids(1, 128, 8.0).unwrap();
        let n = 100_000;
        let xs = normals(n, 11);
        let us = normals(n, 12);
        let uxs = normals(n, 13);
        let z: Vec<f64> = xs.iter().zip(&us).map(|(a, b)| a + b).collect();
        let x: Vec<f64> = xs.iter().zip(&uxs).map(|(a, b)| a + 0.5 * b).collect();
        let sample = Sample::new(1, z.clone(), Some(x.clone()), None, None).unwrap();
        let e = epsilon_k(&sample, 0, &fg, EpsilonSign::Plus).unwrap();
        let mean_x = x.iter().sum::<f64>() / n as f64;
        assert_eq!(e.at_origin(), C64::new(0.0, mean_x));
        let mut worst: f64 = 0.0;
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            if s.abs() <= 3.0 {
                worst = worst.max((e.value(i) - C64::new(-s * (-s * s).exp(), 0.0)).norm());
            }
        }
        assert!(worst < 0.02, "sup error {worst}");
        let zero_x = Sample::new(1, z, Some(vec![0.0; n]), None, None).unwrap();
        assert_eq!(
            epsilon_k(&zero_x, 0, &fg, EpsilonSign::Plus)
                .unwrap()
                .sup_norm(),
            0.0
        );
        let no_x = Sample::new(1, vec![0.0, 1.0], None, None, None).unwrap();
        assert_eq!(
            epsilon_k(&no_x, 0, &fg, EpsilonSign::Plus),
            Err(MomentsError::MissingColumn("x"))
        );
    }

    #[test]
    fn ecf_derivative_checks() {
        let (fg, _) = make_grids(1, 512, 8.0).unwrap();
        let n = 50_000;
        let a = normals(n, 21);
        let b = normals(n, 22);
        let z: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let sample = Sample::new(1, z.clone(), None, None, None).unwrap();
        let d = ecf_derivative(&sample, 0, &fg).unwrap();
        let mean = z.iter().sum::<f64>() / n as f64;
        assert_eq!(d.at_origin(), C64::new(0.0, mean));
        // σ_z² = 2: (φ_z)' = -2 s e^{-s²}
        let mut worst: f64 = 0.0;
        for i in 0..fg.len() {
            let s = fg.coord(i, 0);
            if s.abs() <= 3.0 {
                worst = worst.max((d.value(i) - C64::new(-2.0 * s * (-s * s).exp(), 0.0)).norm());
            }
        }
        assert!(worst < 0.03, "sup error {worst}");
        // consistency with finite differences of the ECF itself
        let fd = grid_derivative(&ecf(&z, &fg).unwrap(), 0).unwrap();
        let h = fg.step();
        let mut worst: f64 = 0.0;
        for i in 1..fg.len() - 1 {
            if fg.coord(i, 0).abs() <= 3.0 {
                worst = worst.max((fd.value(i) - d.value(i)).norm());
            }
        }
        assert!(worst < 2.0 * h * h, "fd mismatch {worst}");
    }

    #[test]
    fn two_dimensional_ecf_is_product_for_independent_axes() {
        let (fg, _) = make_grids(2, 16, 4.0).unwrap();
        let pts = vec![0.5, -1.0, -0.5, 1.0, 0.5, 1.0, -0.5, -1.0];
        let f = ecf(&pts, &fg).unwrap();
        for i in 0..fg.len() {
            let p = fg.point(i);
            let want = (0.5 * p[0]).cos() * p[1].cos();
            assert!((f.value(i) - C64::new(want, 0.0)).norm() < 1e-13);
        }
        assert_eq!(f.at_origin(), C64::new(1.0, 0.0));
    }

    #[test]
    fn conditional_mean_cases() {
        let (_, sg) = make_grids(1, 256, 16.0).unwrap();
        let n = 100_000;
        let z = normals(n, 31);
        let r = conditional_mean_on_grid(&z, &z, &sg, 0.05).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..sg.len() {
            let x = sg.coord(i, 0);
            if x.abs() <= 2.0 {
                assert!(!r.flagged[i]);
                // leading Nadaraya-Watson bias for a standard normal design is -h^2 x
                worst = worst.max((r.values.value(i).re - x * (1.0 - 0.05f64.powi(2))).abs());
            }
        }
        assert!(worst < 5e-3, "identity regression error {worst}");
        let c = conditional_mean_on_grid(&z, &vec![2.5; n], &sg, 0.1).unwrap();
        for i in 0..sg.len() {
            if !c.flagged[i] {
                assert!((c.values.value(i).re - 2.5).abs() < 1e-12);
            }
        }
        let noise = normals(n, 32);
        let y: Vec<f64> = z.iter().zip(&noise).map(|(a, e)| a * a + e).collect();
        let q = conditional_mean_on_grid(&z, &y, &sg, 0.1).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..sg.len() {
            let x = sg.coord(i, 0);
            if x.abs() <= 1.5 {
                worst = worst.max((q.values.value(i).re - x * x).abs());
            }
        }
        // observed 0.025 with this seed
        assert!(worst < 0.05, "quadratic regression error {worst}");
        assert!(matches!(
            conditional_mean_on_grid(&z, &z, &sg, 0.0),
            Err(MomentsError::BadBandwidth(_))
        ));
        let far: Vec<f64> = (0..10).map(|i| 1e6 + i as f64).collect();
        assert_eq!(
            conditional_mean_on_grid(&far, &far, &sg, 0.1).unwrap_err(),
            MomentsError::AllFlagged
        );
    }

    #[test]
    fn silverman_scale() {
        let z = normals(10_000, 5);
        let h = silverman_bandwidth(&z, 1);
        let expected = 1.06 * 10_000f64.powf(-0.2);
        assert!((h / expected - 1.0).abs() < 0.05);
    }
}
