//! Accuracy of a fitted model against known ground truth: RMSE of the
//! interventional mean, relative errors of the noise scales, and the average
//! L1 distance between interventional outcome densities (AID).

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::gpdata::SyntheticTruth;
use crate::math::{linspace, normal_pdf};
use crate::rng::{permutation, stream};
use crate::scm::{mixture_density, FittedModel, OutcomeModel, Variant};

/// The true data-generating outcome mechanism.
pub trait GroundTruth: OutcomeModel {
    /// Treatment measurement-error SD.
    fn tau(&self) -> f64;

    /// `Z ~ N(0, 1)` scalar, which permits quadrature over `z`.
    fn standard_normal_z(&self) -> bool;
}

impl OutcomeModel for SyntheticTruth {
    fn z_dim(&self) -> usize {
        1
    }

    fn mu_y_batch(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        z.iter().zip(t).map(|(&z, &t)| self.mu_y_at(z, t)).collect()
    }

    fn outcome_sd(&self) -> f64 {
        self.sigma
    }
}

impl GroundTruth for SyntheticTruth {
    fn tau(&self) -> f64 {
        self.tau
    }

    fn standard_normal_z(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test treatment values averaged over in AID.
    pub n_x_star: usize,
    /// Uniform `y` draws per treatment value.
    pub n_y: usize,
    /// Test covariate rows used for Monte-Carlo adjustment; `None` uses all.
    pub n_z: Option<usize>,
    /// Fraction of the test `y` range added on each side of the AID range.
    pub y_expand: f64,
    pub z_lo: f64,
    pub z_hi: f64,
    pub z_nodes: usize,
    /// Feed the observed treatment to Naive when scoring RMSE.
    pub naive_uses_observed: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_x_star: 500,
            n_y: 2000,
            n_z: None,
            y_expand: 0.25,
            z_lo: -6.0,
            z_hi: 6.0,
            z_nodes: 401,
            naive_uses_observed: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x_star == 0 || self.n_y == 0 || self.n_z == Some(0) || self.z_nodes < 2 {
            return Err(Error::invalid("evaluation sample sizes must be positive"));
        }
        if !(self.y_expand >= 0.0) || !(self.z_hi > self.z_lo) {
            return Err(Error::invalid("evaluation ranges are degenerate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub y_lo: f64,
    pub y_hi: f64,
    pub n_y: usize,
    pub n_x_star: usize,
    pub n_z: usize,
    /// `None` when the truth density is itself a Monte-Carlo average.
    pub z_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    pub rmse_mu_y: f64,
    pub sigma_hat: f64,
    pub rel_err_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_err_tau: Option<f64>,
    pub aid: f64,
    pub n_test: usize,
    pub quadrature: QuadratureInfo,
}

/// Per-row means behind `rmse_mu_y`, kept for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub model: Vec<f64>,
    pub truth: Vec<f64>,
}

/// `sqrt(mean((a − b)²))`.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    check_len("rmse input", a.len(), b.len())?;
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(libm::sqrt(ss / a.len() as f64))
}

/// Signed `(estimate − truth)/truth`.
pub fn rel_error(estimate: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0) {
        return Err(Error::invalid("relative error needs a positive reference"));
    }
    Ok((estimate - truth) / truth)
}

/// Model and true `μ_Y` on the test rows. The truth always sees `x*`; the
/// model sees `x` instead when it is Naive and `naive_uses_observed` is set.
pub fn mu_y_predictions(
    model: &FittedModel,
    truth: &dyn GroundTruth,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<Predictions> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let xs = test.x_star()?;
    let t = if model.variant == Variant::Naive && cfg.naive_uses_observed { &test.x } else { xs };
    Ok(Predictions {
        model: model.as_outcome_model().mu_y_batch(&test.z, t),
        truth: truth.mu_y_batch(&test.z, xs),
    })
}

pub fn rmse_mu_y(
    model: &FittedModel,
    truth: &dyn GroundTruth,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<f64> {
    let p = mu_y_predictions(model, truth, test, cfg)?;
    rmse(&p.model, &p.truth)
}

/// Trapezoid nodes on `[lo, hi]` with weights `N(z | 0, 1)·Δ`.
fn normal_quadrature(cfg: &EvalConfig) -> (Vec<f64>, Vec<f64>) {
    let z = linspace(cfg.z_lo, cfg.z_hi, cfg.z_nodes);
    let h = (cfg.z_hi - cfg.z_lo) / (cfg.z_nodes - 1) as f64;
    let w = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let edge = if i == 0 || i + 1 == cfg.z_nodes { 0.5 } else { 1.0 };
            edge * h * normal_pdf(v, 0.0, 1.0)
        })
        .collect();
    (z, w)
}

/// `p(y | do(x*))` under the truth: trapezoid quadrature over `z` for a
/// standard-normal scalar covariate, else a Monte-Carlo average over
/// `z_sample`.
pub fn truth_interventional_density(
    truth: &dyn GroundTruth,
    x_star: f64,
    y_grid: &[f64],
    cfg: &EvalConfig,
    z_sample: &[f64],
) -> Result<Vec<f64>> {
    if y_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("y grid must be strictly increasing"));
    }
    Ok(TruthDensity::new(truth, cfg, z_sample)?.at(truth, x_star, y_grid))
}

/// Truth density with the `z` nodes fixed once.
struct TruthDensity {
    z: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl TruthDensity {
    fn new(truth: &dyn GroundTruth, cfg: &EvalConfig, z_sample: &[f64]) -> Result<Self> {
        if truth.standard_normal_z() {
            let (z, w) = normal_quadrature(cfg);
            Ok(Self { z, weights: Some(w) })
        } else {
            let d = truth.z_dim();
            if z_sample.is_empty() || z_sample.len() % d != 0 {
                return Err(Error::Empty("z sample"));
            }
            Ok(Self { z: z_sample.to_vec(), weights: None })
        }
    }

    fn means(&self, truth: &dyn GroundTruth, x_star: f64) -> Vec<f64> {
        let n = self.z.len() / truth.z_dim();
        truth.mu_y_batch(&self.z, &vec![x_star; n])
    }

    fn at(&self, truth: &dyn GroundTruth, x_star: f64, ys: &[f64]) -> Vec<f64> {
        let mu = self.means(truth, x_star);
        let sd = truth.outcome_sd();
        match &self.weights {
            None => mixture_density(&mu, sd, ys),
            Some(w) => ys
                .iter()
                .map(|&y| mu.iter().zip(w).map(|(&m, &wk)| wk * normal_pdf(y, m, sd)).sum())
                .collect(),
        }
    }

    fn on_grid(&self, truth: &dyn GroundTruth, x_star: f64, grid: RegularGrid) -> Vec<f64> {
        let mu = self.means(truth, x_star);
        mixture_on_grid(&mu, self.weights.as_deref(), truth.outcome_sd(), grid)
    }
}

/// `y_k = start + k·step` for `k < len`.
#[derive(Debug, Clone, Copy)]
struct RegularGrid {
    start: f64,
    step: f64,
    len: usize,
}

/// Gaussian components beyond this many SDs contribute below `e^{-40}`
/// relative to their peak and are skipped.
const WINDOW_SDS: f64 = 9.0;

/// `Σ_m w_m·N(y_k | μ_m, sd²)` on a regular grid (`w_m = 1/M` when `weights`
/// is `None`). Consecutive Gaussian values are related by a ratio that itself
/// changes by the constant factor `exp(−step²/sd²)`, so each component costs
/// two multiplications per grid point within its window.
fn mixture_on_grid(means: &[f64], weights: Option<&[f64]>, sd: f64, grid: RegularGrid) -> Vec<f64> {
    let RegularGrid { start, step, len } = grid;
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    let inv_var = 1.0 / (sd * sd);
    let decay = crate::math::fm::exp(-step * step * inv_var);
    let norm = 1.0 / (sd * libm::sqrt(2.0 * core::f64::consts::PI));
    let uniform = 1.0 / means.len() as f64;
    for (j, &m) in means.iter().enumerate() {
        let coef = norm * weights.map_or(uniform, |w| w[j]);
        let lo = libm::ceil((m - WINDOW_SDS * sd - start) / step).max(0.0);
        let hi = libm::floor((m + WINDOW_SDS * sd - start) / step).min((len - 1) as f64);
        if !(lo <= hi) {
            continue;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let k0 = (libm::round((m - start) / step).max(lo as f64) as usize).min(hi);
        let d0 = start + k0 as f64 * step - m;
        let g0 = coef * crate::math::fm::exp(-0.5 * d0 * d0 * inv_var);
        out[k0] += g0;
        // Upward: g_{k+1} = g_k·exp(−(2·d_k·step + step²)/(2·sd²)).
        let (mut g, mut r) = (g0, crate::math::fm::exp(-(2.0 * d0 * step + step * step) * 0.5 * inv_var));
        for v in out[k0 + 1..=hi].iter_mut() {
            g *= r;
            r *= decay;
            *v += g;
        }
        // Downward: g_{k−1} = g_k·exp((2·d_k·step − step²)/(2·sd²)).
        let (mut g, mut r) = (g0, crate::math::fm::exp((2.0 * d0 * step - step * step) * 0.5 * inv_var));
        for v in out[lo..k0].iter_mut().rev() {
            g *= r;
            r *= decay;
            *v += g;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AidEstimate {
    pub value: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub n_x_star: usize,
    pub n_z: usize,
    pub quadrature: bool,
}

/// Average over test `x*` values of `∫ |p_model(y|do(x*)) − p_truth(y|do(x*))| dy`.
/// The inner integral averages over uniform `y` draws on the expanded test
/// `y` range; each inner estimate is clamped to `[0, 2]`.
pub fn aid(
    model: &dyn OutcomeModel,
    truth: &dyn GroundTruth,
    test: &Dataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<AidEstimate> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    check_len("model covariate width", test.z_dim, model.z_dim())?;
    check_len("truth covariate width", test.z_dim, truth.z_dim())?;
    let xs = test.x_star()?;
    let (ymin, ymax) = test
        .y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = ymax - ymin;
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::invalid("test outcomes have a degenerate range"));
    }
    let y_lo = ymin - cfg.y_expand * span;
    let y_hi = ymax + cfg.y_expand * span;
    let width = y_hi - y_lo;

    let mut rng = stream(seed, 0);
    let n = test.len();
    let x_idx: Vec<usize> = permutation(&mut rng, n).into_iter().take(cfg.n_x_star).collect();
    let z_idx: Vec<usize> = permutation(&mut rng, n).into_iter().take(cfg.n_z.unwrap_or(n)).collect();
    let z_sample = test.select(&z_idx).z;
    let m = z_idx.len();
    let truth_density = TruthDensity::new(truth, cfg, &z_sample)?;

    // Systematic uniform sample: a regular grid with one uniform offset per x*.
    let step = width / cfg.n_y as f64;
    let mut total = 0.0;
    for &i in &x_idx {
        let x_star = xs[i];
        let grid = RegularGrid { start: y_lo + rng.random::<f64>() * step, step, len: cfg.n_y };
        let mu = model.mu_y_batch(&z_sample, &vec![x_star; m]);
        let p_model = mixture_on_grid(&mu, None, model.outcome_sd(), grid);
        let p_truth = truth_density.on_grid(truth, x_star, grid);
        let l1: f64 = p_model.iter().zip(&p_truth).map(|(a, b)| (a - b).abs()).sum::<f64>() * step;
        if !l1.is_finite() {
            return Err(Error::NonFinite { term: "interventional density", index: i });
        }
        total += l1.clamp(0.0, 2.0);
    }
    Ok(AidEstimate {
        value: total / x_idx.len() as f64,
        y_lo,
        y_hi,
        n_x_star: x_idx.len(),
        n_z: m,
        quadrature: truth.standard_normal_z(),
    })
}

/// All applicable metrics for one fitted model.
pub fn evaluate(
    model: &FittedModel,
    truth: &dyn GroundTruth,
    test: &Dataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(MetricReport, Predictions)> {
    let preds = mu_y_predictions(model, truth, test, cfg)?;
    let a = aid(model.as_outcome_model(), truth, test, cfg, seed)?;
    let sigma_hat = model.sigma();
    let tau_hat = model.learned_tau();
    let report = MetricReport {
        variant: model.variant,
        rmse_mu_y: rmse(&preds.model, &preds.truth)?,
        sigma_hat,
        rel_err_sigma: rel_error(sigma_hat, truth.outcome_sd())?,
        tau_hat,
        // Undefined against a noise-free truth; `tau_hat` is still reported.
        rel_err_tau: tau_hat
            .filter(|_| truth.tau() > 0.0)
            .map(|t| rel_error(t, truth.tau()))
            .transpose()?,
        aid: a.value,
        n_test: test.len(),
        quadrature: QuadratureInfo {
            y_lo: a.y_lo,
            y_hi: a.y_hi,
            n_y: cfg.n_y,
            n_x_star: a.n_x_star,
            n_z: a.n_z,
            z_nodes: a.quadrature.then_some(cfg.z_nodes),
        },
    };
    Ok((report, preds))
}
