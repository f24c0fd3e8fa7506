//! Synthetic benchmarks drawn from squared-exponential Gaussian processes.
//!
//! Exact GP draws at every data point are too expensive, so each function is
//! sampled jointly on an evenly spaced grid (1000 points in 1-D, 31×31 in 2-D)
//! and then defined everywhere as the noiseless GP posterior mean given those
//! grid values.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::math::{sample_sd, softplus};
use crate::rng::{standard_normals, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqExpKernel {
    pub alpha: f64,
    pub lengthscale: f64,
}

impl Default for SqExpKernel {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lengthscale: 2.0,
        }
    }
}

impl SqExpKernel {
    /// `α·exp(−|u1 − u2|² / 2l²)`.
    pub fn eval(&self, u1: &[f64], u2: &[f64]) -> Result<f64> {
        check_len("kernel point", u1.len(), u2.len())?;
        Ok(self.eval_sq_dist(sq_dist(u1, u2)))
    }

    #[inline]
    fn eval_sq_dist(&self, d2: f64) -> f64 {
        self.alpha * crate::math::fm::exp(-d2 / (2.0 * self.lengthscale * self.lengthscale))
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Relative padding of the grid beyond the observed data range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPadding {
    pub low: f64,
    pub high: f64,
}

impl Default for GridPadding {
    fn default() -> Self {
        Self {
            low: 0.25,
            high: 0.25,
        }
    }
}

/// `k` evenly spaced points over `[min − low·r, max + high·r]`, `r = max − min`.
pub fn make_grid(data_min: f64, data_max: f64, k: usize, padding: GridPadding) -> Result<Vec<f64>> {
    if !(data_max > data_min) {
        return Err(Error::invalid("grid needs data_max > data_min"));
    }
    if k < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let range = data_max - data_min;
    Ok(crate::math::linspace(
        data_min - padding.low * range,
        data_max + padding.high * range,
        k,
    ))
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// A deterministic function: GP posterior mean given the values at
/// `grid_points`. `f(t) = prior_mean + Σ_k K(t, g_k)·w_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFunction {
    pub dim: usize,
    /// Row-major `K × dim`.
    pub grid_points: Vec<f64>,
    pub grid_values: Vec<f64>,
    pub prior_mean: f64,
    pub kernel: SqExpKernel,
    pub solved_coefficients: Vec<f64>,
    pub jitter: f64,
}

impl GpFunction {
    pub fn len(&self) -> usize {
        self.grid_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_values.is_empty()
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        debug_assert_eq!(t.len(), self.dim);
        let mut acc = 0.0;
        for (g, w) in self
            .grid_points
            .chunks_exact(self.dim)
            .zip(&self.solved_coefficients)
        {
            acc += self.kernel.eval_sq_dist(sq_dist(t, g)) * w;
        }
        self.prior_mean + acc
    }

    /// Evaluates at every row of a row-major `n × dim` matrix.
    pub fn eval_many(&self, points: &[f64]) -> Vec<f64> {
        points.chunks_exact(self.dim).map(|t| self.eval(t)).collect()
    }
}

/// In-place lower Cholesky factor (row by row) of a row-major SPD matrix.
/// Returns `false` if a pivot is not positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        let (done, rest) = a.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + j + 1];
            let dot: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(p, q)| p * q).sum();
            row_i[j] = (row_i[j] - dot) / row_j[j];
        }
        let d = row_i[i] - row_i[..i].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        row_i[i] = libm::sqrt(d);
        for v in row_i[i + 1..].iter_mut() {
            *v = 0.0;
        }
    }
    true
}

/// Solves `Lᵀ w = b` for lower-triangular row-major `L`.
fn solve_upper_from_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Jitter schedule (relative to α) tried in order.
pub const JITTER_SCHEDULE: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Samples the grid values jointly from `GP(prior_mean, K)` and returns the
/// posterior-mean function through them.
///
/// With `K + δI = L Lᵀ` and raw draw `f = m + L ε`, the coefficients are
/// `w = (K + δI)⁻¹ (f − m) = L⁻ᵀ ε`. The stored `grid_values` are the values
/// of the resulting function at the grid, `m + K w`, which differ from the
/// raw draw by `δ·w`.
pub fn sample_gp_function<R: rand::Rng + ?Sized>(
    kernel: SqExpKernel,
    prior_mean: f64,
    grid: Vec<f64>,
    dim: usize,
    rng: &mut R,
) -> Result<GpFunction> {
    if dim == 0 || grid.len() % dim != 0 || grid.is_empty() {
        return Err(Error::invalid("grid must be a non-empty row-major point list"));
    }
    let n = grid.len() / dim;
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_sq_dist(sq_dist(
                &grid[i * dim..(i + 1) * dim],
                &grid[j * dim..(j + 1) * dim],
            ));
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let eps = standard_normals(rng, n);
    let mut last = 0.0;
    for rel in JITTER_SCHEDULE {
        let jitter = rel * kernel.alpha;
        last = jitter;
        let mut l = gram.clone();
        for i in 0..n {
            l[i * n + i] += jitter;
        }
        if !cholesky_in_place(&mut l, n) {
            continue;
        }
        let mut w = eps.clone();
        solve_upper_from_lower(&l, n, &mut w);
        let grid_values = (0..n)
            .map(|i| {
                prior_mean
                    + gram[i * n..(i + 1) * n]
                        .iter()
                        .zip(&w)
                        .map(|(k, c)| k * c)
                        .sum::<f64>()
            })
            .collect();
        return Ok(GpFunction {
            dim,
            grid_points: grid,
            grid_values,
            prior_mean,
            kernel,
            solved_coefficients: w,
            jitter,
        });
    }
    Err(Error::Cholesky { jitter: last })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kernel: SqExpKernel,
    pub grid_points_1d: usize,
    /// The 2-D grid for `μ_Y` has `grid_side_2d²` points.
    pub grid_side_2d: usize,
    pub padding: GridPadding,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kernel: SqExpKernel::default(),
            grid_points_1d: 1000,
            grid_side_2d: 31,
            padding: GridPadding::default(),
        }
    }
}

/// The data-generating functions and noise scales of one synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub mu_xstar: GpFunction,
    /// Pre-softplus standard deviation of `X* | z`.
    pub sigma_xstar_raw: GpFunction,
    pub mu_y: GpFunction,
    pub tau: f64,
    pub sigma: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticTruth {
    pub fn mu_xstar_at(&self, z: f64) -> f64 {
        self.mu_xstar.eval(&[z])
    }

    pub fn sigma_xstar_at(&self, z: f64) -> f64 {
        softplus(self.sigma_xstar_raw.eval(&[z]))
    }

    pub fn mu_y_at(&self, z: f64, x_star: f64) -> f64 {
        self.mu_y.eval(&[z, x_star])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: Dataset,
    pub truth: SyntheticTruth,
}

/// Train / validation / test samples sharing one truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub truth: SyntheticTruth,
}

// Stream ids; split `s` adds `s` to the per-variable base.
const STREAM_MU_XSTAR: u64 = 1;
const STREAM_SIGMA_XSTAR: u64 = 2;
const STREAM_MU_Y: u64 = 3;
const STREAM_Z: u64 = 100;
const STREAM_XSTAR: u64 = 200;
const STREAM_X: u64 = 300;
const STREAM_Y: u64 = 400;

/// Runs the generator for several splits at once. All splits share one set of
/// functions; grids cover the pooled sample; `τ` and `σ` are computed from
/// split 0.
pub fn generate_splits(
    sizes: &[usize],
    noise_level: f64,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(Vec<Dataset>, SyntheticTruth)> {
    if sizes.is_empty() || sizes.iter().any(|&n| n < 2) {
        return Err(Error::invalid("every split needs at least two points"));
    }
    if !(noise_level >= 0.0) {
        return Err(Error::invalid("noise level must be non-negative"));
    }
    // z_i ~ N(0, 1)
    let zs: Vec<Vec<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(s, &n)| standard_normals(&mut stream(seed, STREAM_Z + s as u64), n))
        .collect();

    // μ_X* ~ GP(0, K), g⁻¹∘σ_X* ~ GP(1, K) on a grid over all z.
    let (zlo, zhi) = min_max(zs.iter().flatten().copied());
    let zgrid = make_grid(zlo, zhi, cfg.grid_points_1d, cfg.padding)?;
    let mu_xstar = sample_gp_function(
        cfg.kernel,
        0.0,
        zgrid.clone(),
        1,
        &mut stream(seed, STREAM_MU_XSTAR),
    )?;
    let sigma_xstar_raw =
        sample_gp_function(cfg.kernel, 1.0, zgrid, 1, &mut stream(seed, STREAM_SIGMA_XSTAR))?;

    // x*_i ~ N(μ_X*(z_i), σ_X*(z_i)²)
    let xstars: Vec<Vec<f64>> = zs
        .iter()
        .enumerate()
        .map(|(s, z)| {
            let eps = standard_normals(&mut stream(seed, STREAM_XSTAR + s as u64), z.len());
            z.iter()
                .zip(eps)
                .map(|(&zi, e)| mu_xstar.eval(&[zi]) + softplus(sigma_xstar_raw.eval(&[zi])) * e)
                .collect()
        })
        .collect();

    // μ_Y ~ GP((0,0), K) on a 2-D grid over the realized (z, x*).
    let (xlo, xhi) = min_max(xstars.iter().flatten().copied());
    let gz = make_grid(zlo, zhi, cfg.grid_side_2d, cfg.padding)?;
    let gx = make_grid(xlo, xhi, cfg.grid_side_2d, cfg.padding)?;
    let mut grid2 = Vec::with_capacity(2 * gz.len() * gx.len());
    for &a in &gz {
        for &b in &gx {
            grid2.push(a);
            grid2.push(b);
        }
    }
    let mu_y = sample_gp_function(cfg.kernel, 0.0, grid2, 2, &mut stream(seed, STREAM_MU_Y))?;

    let mu_ys: Vec<Vec<f64>> = zs
        .iter()
        .zip(&xstars)
        .map(|(z, xs)| z.iter().zip(xs).map(|(&a, &b)| mu_y.eval(&[a, b])).collect())
        .collect();

    let tau = noise_level * sample_sd(&xstars[0]);
    let sigma = noise_level * sample_sd(&mu_ys[0]);

    let mut out = Vec::with_capacity(sizes.len());
    for s in 0..sizes.len() {
        let n = sizes[s];
        let ex = standard_normals(&mut stream(seed, STREAM_X + s as u64), n);
        let ey = standard_normals(&mut stream(seed, STREAM_Y + s as u64), n);
        let x: Vec<f64> = xstars[s].iter().zip(ex).map(|(xs, e)| xs + tau * e).collect();
        let y: Vec<f64> = mu_ys[s].iter().zip(ey).map(|(m, e)| m + sigma * e).collect();
        out.push(Dataset::new(1, zs[s].clone(), Some(xstars[s].clone()), x, y)?);
    }
    let truth = SyntheticTruth {
        mu_xstar,
        sigma_xstar_raw,
        mu_y,
        tau,
        sigma,
        noise_level,
        seed,
    };
    Ok((out, truth))
}

/// One dataset of size `n` with noise level `L`.
pub fn generate_dataset(
    n: usize,
    noise_level: f64,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<SyntheticDataset> {
    let (mut data, truth) = generate_splits(&[n], noise_level, cfg, seed)?;
    Ok(SyntheticDataset {
        data: data.pop().unwrap(),
        truth,
    })
}

pub fn dataset_bundle(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    noise_level: f64,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<SyntheticBundle> {
    let (data, truth) = generate_splits(&[n_train, n_val, n_test], noise_level, cfg, seed)?;
    let mut it = data.into_iter();
    Ok(SyntheticBundle {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
        truth,
    })
}
