//! Importance-weighted bound and its reverse-mode gradient.
//!
//! Per point `i` and sample `j`, with `x*_ij = μ_q,i + ε_ij·σ_q,i`:
//!
//! ```text
//! w_ij = log p(x*_ij | z_i) + β·log p(x_i | x*_ij) + log p(y_i | z_i, x*_ij) − β·log q(x*_ij | ·)
//! L_i  = logsumexp_j w_ij − log K
//! ```
//!
//! Gradients are written out by hand: each Gaussian log-density term is
//! differentiated in its mean, scale and argument, the argument derivative is
//! chained through the reparameterization, and scales through their softplus
//! links. Samples enter weighted by their self-normalized importance weight.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::data::{concat_z_x_y, Dataset};
use crate::error::{check_len, Error, Result};
use crate::math::{logsumexp, normal_log_pdf, sigmoid, softplus, HALF_LN_2PI};
use crate::nnet::Tape;
use crate::rng::standard_normals;
use crate::scm::{CemeGrads, CemeModel};

/// Borrowed observations `(z, x, y)`; `z` row-major `len × z_dim`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub z_dim: usize,
    pub z: &'a [f64],
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(z_dim: usize, z: &'a [f64], x: &'a [f64], y: &'a [f64]) -> Result<Self> {
        let b = Self { z_dim, z, x, y };
        b.check()?;
        Ok(b)
    }

    pub fn of(d: &'a Dataset) -> Self {
        Self { z_dim: d.z_dim, z: &d.z, x: &d.x, y: &d.y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows `lo..hi`.
    pub fn slice(&self, lo: usize, hi: usize) -> Batch<'a> {
        Batch {
            z_dim: self.z_dim,
            z: &self.z[lo * self.z_dim..hi * self.z_dim],
            x: &self.x[lo..hi],
            y: &self.y[lo..hi],
        }
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("batch"));
        }
        check_len("batch z", self.len() * self.z_dim, self.z.len())?;
        check_len("batch y", self.len(), self.y.len())
    }
}

/// Decoder activations at `R = n·k` latent values; row `r` belongs to point `r / k`.
struct DecoderPass {
    prior_mu: Tape,
    prior_sd: Tape,
    outcome: Tape,
    s1: Vec<f64>,
    tau: f64,
    sigma: f64,
    log_prior: Vec<f64>,
    log_meas: Vec<f64>,
    log_out: Vec<f64>,
}

fn decoder_forward(m: &CemeModel, b: &Batch<'_>, xs: &[f64], k: usize) -> Result<DecoderPass> {
    let n = b.len();
    let d = b.z_dim;
    check_len("model covariate width", m.z_dim, d)?;
    let prior_mu = m.mu_xstar.forward_tape(b.z.to_vec(), n)?;
    let prior_sd = m.sigma_xstar.forward_tape(b.z.to_vec(), n)?;
    let s1: Vec<f64> = prior_sd.output().iter().map(|&r| softplus(r)).collect();
    let mut input = Vec::with_capacity(n * k * (d + 1));
    for (r, &v) in xs.iter().enumerate() {
        let i = r / k;
        input.extend_from_slice(&b.z[i * d..(i + 1) * d]);
        input.push(v);
    }
    let outcome = m.mu_y.forward_tape(input, n * k)?;
    let (tau, sigma) = (m.tau(), m.sigma());
    let m1 = prior_mu.output();
    let mu = outcome.output();
    let mut log_prior = Vec::with_capacity(n * k);
    let mut log_meas = Vec::with_capacity(n * k);
    let mut log_out = Vec::with_capacity(n * k);
    for (r, &v) in xs.iter().enumerate() {
        let i = r / k;
        log_prior.push(normal_log_pdf(v, m1[i], s1[i]));
        log_meas.push(normal_log_pdf(b.x[i], v, tau));
        log_out.push(normal_log_pdf(b.y[i], mu[r], sigma));
    }
    Ok(DecoderPass { prior_mu, prior_sd, outcome, s1, tau, sigma, log_prior, log_meas, log_out })
}

impl DecoderPass {
    fn first_non_finite(&self) -> Option<Error> {
        for r in 0..self.log_prior.len() {
            let term = if !self.log_prior[r].is_finite() {
                "log p(x* | z)"
            } else if !self.log_meas[r].is_finite() {
                "log p(x | x*)"
            } else if !self.log_out[r].is_finite() {
                "log p(y | z, x*)"
            } else {
                continue;
            };
            return Some(Error::NonFinite { term, index: r });
        }
        None
    }
}

/// Adds the gradient of `Σ_r cp_r·log_prior_r + cm_r·log_meas_r + co_r·log_out_r`
/// into `g` and returns its derivative in each latent value.
#[allow(clippy::too_many_arguments)]
fn decoder_backward(
    m: &CemeModel,
    b: &Batch<'_>,
    pass: &DecoderPass,
    xs: &[f64],
    k: usize,
    cp: &[f64],
    cm: &[f64],
    co: &[f64],
    g: &mut CemeGrads,
) -> Result<Vec<f64>> {
    let n = b.len();
    let d = b.z_dim;
    let m1 = pass.prior_mu.output();
    let r1 = pass.prior_sd.output();
    let mu = pass.outcome.output();
    let (tau, sigma) = (pass.tau, pass.sigma);
    let (tau2, sigma2) = (tau * tau, sigma * sigma);

    let mut d_m1 = vec![0.0; n];
    let mut d_s1 = vec![0.0; n];
    let mut d_mu = vec![0.0; n * k];
    let mut d_xs = vec![0.0; n * k];
    let mut d_tau = 0.0;
    let mut d_sigma = 0.0;
    for (r, &v) in xs.iter().enumerate() {
        let i = r / k;
        let s1 = pass.s1[i];
        let u = v - m1[i];
        d_m1[i] += cp[r] * u / (s1 * s1);
        d_s1[i] += cp[r] * (-1.0 / s1 + u * u / (s1 * s1 * s1));
        d_xs[r] -= cp[r] * u / (s1 * s1);

        let e = b.x[i] - v;
        d_xs[r] += cm[r] * e / tau2;
        d_tau += cm[r] * (-1.0 / tau + e * e / (tau2 * tau));

        let o = b.y[i] - mu[r];
        d_mu[r] = co[r] * o / sigma2;
        d_sigma += co[r] * (-1.0 / sigma + o * o / (sigma2 * sigma));
    }

    let d_in = m
        .mu_y
        .backward(&pass.outcome, &d_mu, &mut g.mu_y, true)?
        .expect("input gradient requested");
    for (r, dx) in d_xs.iter_mut().enumerate() {
        *dx += d_in[r * (d + 1) + d];
    }
    m.mu_xstar.backward(&pass.prior_mu, &d_m1, &mut g.mu_xstar, false)?;
    let d_r1: Vec<f64> = d_s1.iter().zip(r1).map(|(ds, &r)| ds * sigmoid(r)).collect();
    m.sigma_xstar.backward(&pass.prior_sd, &d_r1, &mut g.sigma_xstar, false)?;
    if m.tau_fixed.is_none() {
        g.tau_raw += d_tau * sigmoid(m.tau_raw);
    }
    g.sigma_raw += d_sigma * sigmoid(m.sigma_raw);
    Ok(d_xs)
}

/// `Σ_i log p(x*_i, x_i, y_i | z_i)` with its gradient added into `g`.
pub fn decoder_log_joint_grad(
    m: &CemeModel,
    b: &Batch<'_>,
    x_star: &[f64],
    g: &mut CemeGrads,
) -> Result<f64> {
    b.check()?;
    check_len("latent values", b.len(), x_star.len())?;
    let pass = decoder_forward(m, b, x_star, 1)?;
    if let Some(e) = pass.first_non_finite() {
        return Err(e);
    }
    let ones = vec![1.0; b.len()];
    decoder_backward(m, b, &pass, x_star, 1, &ones, &ones, &ones, g)?;
    Ok((0..b.len())
        .map(|r| pass.log_prior[r] + pass.log_meas[r] + pass.log_out[r])
        .sum())
}

struct BoundPass {
    enc_mu: Tape,
    enc_sd: Tape,
    sq: Vec<f64>,
    xs: Vec<f64>,
    dec: DecoderPass,
    /// Log weights, row `i·k + j`.
    w: Vec<f64>,
    /// Per-point bound `L_i`.
    bound: Vec<f64>,
}

fn bound_forward(m: &CemeModel, b: &Batch<'_>, k: usize, beta: f64, eps: &[f64]) -> Result<BoundPass> {
    b.check()?;
    if k == 0 {
        return Err(Error::invalid("need at least one importance sample"));
    }
    if !(beta >= 1.0) {
        return Err(Error::invalid("term weight must be at least 1"));
    }
    let n = b.len();
    check_len("importance noise", n * k, eps.len())?;
    check_len("model covariate width", m.z_dim, b.z_dim)?;
    let enc_in = concat_z_x_y(b.z, b.z_dim, b.x, b.y);
    let enc_mu = m.encoder_mu.forward_tape(enc_in.clone(), n)?;
    let enc_sd = m.encoder_sigma.forward_tape(enc_in, n)?;
    let mu_q = enc_mu.output();
    let sq: Vec<f64> = enc_sd.output().iter().map(|&r| softplus(r)).collect();
    let xs: Vec<f64> = eps
        .iter()
        .enumerate()
        .map(|(r, &e)| mu_q[r / k] + e * sq[r / k])
        .collect();
    let dec = decoder_forward(m, b, &xs, k)?;
    if let Some(e) = dec.first_non_finite() {
        return Err(e);
    }
    let mut w = Vec::with_capacity(n * k);
    for (r, &e) in eps.iter().enumerate() {
        let log_q = -crate::math::fm::log(sq[r / k]) - 0.5 * e * e - HALF_LN_2PI;
        if !log_q.is_finite() {
            return Err(Error::NonFinite { term: "log q(x* | z, x, y)", index: r });
        }
        w.push(dec.log_prior[r] + beta * dec.log_meas[r] + dec.log_out[r] - beta * log_q);
    }
    let log_k = crate::math::fm::log(k as f64);
    let bound: Vec<f64> = w.chunks(k).map(|c| logsumexp(c) - log_k).collect();
    if let Some(i) = bound.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "importance-weighted bound", index: i * k });
    }
    Ok(BoundPass { enc_mu, enc_sd, sq, xs, dec, w, bound })
}

/// Per-point bounds `L_i` for given standard-normal noise (`len·k`, row `i·k + j`).
pub fn iw_elbo_with_eps(
    m: &CemeModel,
    b: &Batch<'_>,
    k: usize,
    beta: f64,
    eps: &[f64],
) -> Result<Vec<f64>> {
    Ok(bound_forward(m, b, k, beta, eps)?.bound)
}

/// `Σ_i L_i` with fresh noise from `rng`.
pub fn iw_elbo<R: Rng + ?Sized>(
    m: &CemeModel,
    b: &Batch<'_>,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<f64> {
    let eps = standard_normals(rng, b.len() * k);
    Ok(iw_elbo_with_eps(m, b, k, beta, &eps)?.iter().sum())
}

/// Returns `Σ_i L_i` and adds `scale · ∂(Σ_i L_i)/∂θ` into `g`.
pub fn iw_elbo_grad(
    m: &CemeModel,
    b: &Batch<'_>,
    k: usize,
    beta: f64,
    eps: &[f64],
    scale: f64,
    g: &mut CemeGrads,
) -> Result<f64> {
    let p = bound_forward(m, b, k, beta, eps)?;
    let n = b.len();
    // Self-normalized weights, scaled.
    let mut a = vec![0.0; n * k];
    for i in 0..n {
        let lse = p.bound[i] + crate::math::fm::log(k as f64);
        for r in i * k..(i + 1) * k {
            a[r] = scale * crate::math::fm::exp(p.w[r] - lse);
        }
    }
    let am: Vec<f64> = a.iter().map(|v| beta * v).collect();
    let d_xs = decoder_backward(m, b, &p.dec, &p.xs, k, &a, &am, &a, g)?;

    let mut d_mu_q = vec![0.0; n];
    let mut d_rq = vec![0.0; n];
    let rq = p.enc_sd.output();
    for i in 0..n {
        let mut d_sq = 0.0;
        for r in i * k..(i + 1) * k {
            d_mu_q[i] += d_xs[r];
            d_sq += d_xs[r] * eps[r] + am[r] / p.sq[i];
        }
        d_rq[i] = d_sq * sigmoid(rq[i]);
    }
    m.encoder_mu.backward(&p.enc_mu, &d_mu_q, &mut g.encoder_mu, false)?;
    m.encoder_sigma.backward(&p.enc_sd, &d_rq, &mut g.encoder_sigma, false)?;
    Ok(p.bound.iter().sum())
}
