//! The measurement-error structural causal model and its baselines.
//!
//! ```text
//!   Z ──► X* ──► X          X* | z ~ N(μ_X*(z), σ_X*(z)²)
//!   │      │                X  = X* + ΔX,  ΔX ~ N(0, τ²)
//!   └────► Y ◄┘             Y  = μ_Y(z, X*) + ΔY,  ΔY ~ N(0, σ²)
//! ```
//!
//! CEME learns every function and both noise scales; CEME⁺ is the same model
//! with `τ` fixed to its known value. Oracle and Naive are plain regressions of
//! `Y` on `(Z, X*)` and `(Z, X)` respectively.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{concat_z_t, concat_z_x_y, Dataset};
use crate::error::{check_len, Error, Result};
use crate::math::{normal_log_pdf, normal_pdf, sample_sd, softplus, softplus_inv, HALF_LN_2PI};
use crate::nnet::{Mlp, ParamGroup};
use crate::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ceme,
    CemePlus,
    Oracle,
    Naive,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ceme, Variant::CemePlus, Variant::Oracle, Variant::Naive];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ceme => "ceme",
            Variant::CemePlus => "ceme_plus",
            Variant::Oracle => "oracle",
            Variant::Naive => "naive",
        }
    }

    /// CEME and CEME⁺ carry a latent true treatment.
    pub fn is_latent(self) -> bool {
        matches!(self, Variant::Ceme | Variant::CemePlus)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ceme" => Ok(Variant::Ceme),
            "ceme_plus" | "ceme+" => Ok(Variant::CemePlus),
            "oracle" => Ok(Variant::Oracle),
            "naive" => Ok(Variant::Naive),
            other => Err(Error::InvalidArgument(alloc::format!("unknown variant `{other}`"))),
        }
    }
}

/// Anything that provides an outcome mean `μ_Y(z, t)` and a homoscedastic
/// outcome noise scale.
pub trait OutcomeModel {
    fn z_dim(&self) -> usize;

    /// `μ_Y` at the rows of `z` (row-major `n × z_dim`) and treatments `t`.
    fn mu_y_batch(&self, z: &[f64], t: &[f64]) -> Vec<f64>;

    fn outcome_sd(&self) -> f64;
}

/// The latent-variable model: decoder networks, noise scales and the
/// amortized encoder `q(x* | z, x, y) = N(μ_q, σ_q²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemeModel {
    pub z_dim: usize,
    pub mu_xstar: Mlp,
    /// Pre-softplus `σ_X*(z)`.
    pub sigma_xstar: Mlp,
    pub mu_y: Mlp,
    pub encoder_mu: Mlp,
    /// Pre-softplus `σ_q(z, x, y)`.
    pub encoder_sigma: Mlp,
    pub tau_raw: f64,
    pub sigma_raw: f64,
    /// Known `τ` (CEME⁺). When set, `tau_raw` is never trained.
    pub tau_fixed: Option<f64>,
}

/// Gradients for every parameter of a [`CemeModel`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CemeGrads {
    pub mu_xstar: Vec<f64>,
    pub sigma_xstar: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub encoder_mu: Vec<f64>,
    pub encoder_sigma: Vec<f64>,
    pub tau_raw: f64,
    pub sigma_raw: f64,
}

impl CemeGrads {
    pub fn all_finite(&self) -> bool {
        self.tau_raw.is_finite()
            && self.sigma_raw.is_finite()
            && [
                &self.mu_xstar,
                &self.sigma_xstar,
                &self.mu_y,
                &self.encoder_mu,
                &self.encoder_sigma,
            ]
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Flattened in model order: five networks, then `tau_raw`, `sigma_raw`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in [
            &self.mu_xstar,
            &self.sigma_xstar,
            &self.mu_y,
            &self.encoder_mu,
            &self.encoder_sigma,
        ] {
            out.extend_from_slice(g);
        }
        out.push(self.tau_raw);
        out.push(self.sigma_raw);
        out
    }
}

impl CemeModel {
    /// Fresh networks with `hidden` widths and initial noise scales.
    pub fn new<R: Rng + ?Sized>(
        z_dim: usize,
        hidden: &[usize],
        tau0: f64,
        sigma0: f64,
        tau_fixed: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if z_dim == 0 {
            return Err(Error::invalid("z_dim must be positive"));
        }
        let tau0 = tau_fixed.unwrap_or(tau0);
        if !(tau0 > 0.0 && sigma0 > 0.0) || !tau0.is_finite() || !sigma0.is_finite() {
            return Err(Error::invalid("initial noise scales must be positive and finite"));
        }
        Ok(Self {
            z_dim,
            mu_xstar: Mlp::with_hidden(z_dim, hidden, 1, rng)?,
            sigma_xstar: Mlp::with_hidden(z_dim, hidden, 1, rng)?,
            mu_y: Mlp::with_hidden(z_dim + 1, hidden, 1, rng)?,
            encoder_mu: Mlp::with_hidden(z_dim + 2, hidden, 1, rng)?,
            encoder_sigma: Mlp::with_hidden(z_dim + 2, hidden, 1, rng)?,
            tau_raw: softplus_inv(tau0),
            sigma_raw: softplus_inv(sigma0),
            tau_fixed,
        })
    }

    /// Initial `τ₀ = ½·sd(x)` and `σ₀ = ½·sd(y)` from the training data.
    pub fn for_data<R: Rng + ?Sized>(
        train: &Dataset,
        hidden: &[usize],
        tau_fixed: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::Empty("training data needs at least two rows"));
        }
        if let Some(t) = tau_fixed {
            if !(t > 0.0) {
                return Err(Error::invalid("a known tau must be positive"));
            }
        }
        Self::new(
            train.z_dim,
            hidden,
            0.5 * sample_sd(&train.x),
            0.5 * sample_sd(&train.y),
            tau_fixed,
            rng,
        )
    }

    pub fn tau(&self) -> f64 {
        self.tau_fixed.unwrap_or_else(|| softplus(self.tau_raw))
    }

    pub fn sigma(&self) -> f64 {
        softplus(self.sigma_raw)
    }

    pub fn zero_grads(&self) -> CemeGrads {
        CemeGrads {
            mu_xstar: vec![0.0; self.mu_xstar.n_params()],
            sigma_xstar: vec![0.0; self.sigma_xstar.n_params()],
            mu_y: vec![0.0; self.mu_y.n_params()],
            encoder_mu: vec![0.0; self.encoder_mu.n_params()],
            encoder_sigma: vec![0.0; self.encoder_sigma.n_params()],
            tau_raw: 0.0,
            sigma_raw: 0.0,
        }
    }

    /// Number of parameters the optimizer updates.
    pub fn n_trainable(&self) -> usize {
        self.nets().iter().map(|n| n.n_params()).sum::<usize>()
            + 1
            + usize::from(self.tau_fixed.is_none())
    }

    /// Every parameter in [`CemeGrads::flatten`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for n in self.nets() {
            out.extend_from_slice(n.params());
        }
        out.push(self.tau_raw);
        out.push(self.sigma_raw);
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("flat parameters", self.flat_params().len(), p.len())?;
        let mut lo = 0;
        for net in [
            &mut self.mu_xstar,
            &mut self.sigma_xstar,
            &mut self.mu_y,
            &mut self.encoder_mu,
            &mut self.encoder_sigma,
        ] {
            let k = net.n_params();
            net.params_mut().copy_from_slice(&p[lo..lo + k]);
            lo += k;
        }
        self.tau_raw = p[lo];
        self.sigma_raw = p[lo + 1];
        Ok(())
    }

    pub fn nets(&self) -> [&Mlp; 5] {
        [
            &self.mu_xstar,
            &self.sigma_xstar,
            &self.mu_y,
            &self.encoder_mu,
            &self.encoder_sigma,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|n| n.all_finite())
            && self.tau_raw.is_finite()
            && self.sigma_raw.is_finite()
    }

    /// Optimizer blocks. Networks are subject to weight decay, the noise
    /// scalars are not, and `tau_raw` is left out entirely for CEME⁺.
    pub fn param_groups<'a>(&'a mut self, g: &'a CemeGrads) -> Vec<ParamGroup<'a>> {
        let mut groups = vec![
            ParamGroup { params: self.mu_xstar.params_mut(), grads: &g.mu_xstar, decay: true },
            ParamGroup { params: self.sigma_xstar.params_mut(), grads: &g.sigma_xstar, decay: true },
            ParamGroup { params: self.mu_y.params_mut(), grads: &g.mu_y, decay: true },
            ParamGroup { params: self.encoder_mu.params_mut(), grads: &g.encoder_mu, decay: true },
            ParamGroup { params: self.encoder_sigma.params_mut(), grads: &g.encoder_sigma, decay: true },
            ParamGroup {
                params: core::slice::from_mut(&mut self.sigma_raw),
                grads: core::slice::from_ref(&g.sigma_raw),
                decay: false,
            },
        ];
        if self.tau_fixed.is_none() {
            groups.push(ParamGroup {
                params: core::slice::from_mut(&mut self.tau_raw),
                grads: core::slice::from_ref(&g.tau_raw),
                decay: false,
            });
        }
        groups
    }

    fn scalar_net(net: &Mlp, input: &[f64]) -> f64 {
        net.forward(input).expect("input width checked by caller")[0]
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        check_len("covariate vector", self.z_dim, z.len())
    }

    pub fn mu_xstar_at(&self, z: &[f64]) -> Result<f64> {
        self.check_z(z)?;
        Ok(Self::scalar_net(&self.mu_xstar, z))
    }

    pub fn sigma_xstar_at(&self, z: &[f64]) -> Result<f64> {
        self.check_z(z)?;
        Ok(softplus(Self::scalar_net(&self.sigma_xstar, z)))
    }

    /// `log N(x*|μ_X*(z), σ_X*(z)²) + log N(x|x*, τ²) + log N(y|μ_Y(z,x*), σ²)`.
    pub fn decoder_log_joint(&self, z: &[f64], x_star: f64, x: f64, y: f64) -> Result<f64> {
        let m1 = self.mu_xstar_at(z)?;
        let s1 = self.sigma_xstar_at(z)?;
        let prior = normal_log_pdf(x_star, m1, s1);
        if !prior.is_finite() {
            return Err(Error::NonFinite { term: "log p(x* | z)", index: 0 });
        }
        let meas = normal_log_pdf(x, x_star, self.tau());
        if !meas.is_finite() {
            return Err(Error::NonFinite { term: "log p(x | x*)", index: 0 });
        }
        let out = normal_log_pdf(y, self.predict_mu_y(z, x_star)?, self.sigma());
        if !out.is_finite() {
            return Err(Error::NonFinite { term: "log p(y | z, x*)", index: 0 });
        }
        Ok(prior + meas + out)
    }

    /// `(μ_q, σ_q)` at one observation.
    pub fn encoder_params(&self, z: &[f64], x: f64, y: f64) -> Result<(f64, f64)> {
        self.check_z(z)?;
        let input = concat_z_x_y(z, self.z_dim, &[x], &[y]);
        Ok((
            Self::scalar_net(&self.encoder_mu, &input),
            softplus(Self::scalar_net(&self.encoder_sigma, &input)),
        ))
    }

    /// Reparameterized draw `x* = μ_q + ε·σ_q` and its `log q`.
    pub fn encoder_sample(&self, z: &[f64], x: f64, y: f64, eps: f64) -> Result<(f64, f64)> {
        if !(eps.is_finite() && x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite { term: "encoder input", index: 0 });
        }
        let (mu, sd) = self.encoder_params(z, x, y)?;
        Ok((mu + eps * sd, -crate::math::fm::log(sd) - 0.5 * eps * eps - HALF_LN_2PI))
    }

    /// Ancestral sampling of `(x*, x, y)` for each row of `z`.
    pub fn sample_scm<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if z.is_empty() || z.len() % self.z_dim != 0 {
            return Err(Error::Empty("z batch must be non-empty and row-aligned"));
        }
        let n = z.len() / self.z_dim;
        let m1 = self.mu_xstar.forward_batch(z, n)?;
        let s1 = self.sigma_xstar.forward_batch(z, n)?;
        let (tau, sigma) = (self.tau(), self.sigma());
        let mut xs = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let v = m1[i] + softplus(s1[i]) * standard_normal(rng);
            xs.push(v);
            x.push(v + tau * standard_normal(rng));
        }
        let mu = self.mu_y_batch(z, &xs);
        let y = mu.iter().map(|m| m + sigma * standard_normal(rng)).collect();
        Ok((xs, x, y))
    }

    pub fn predict_mu_y(&self, z: &[f64], x_star: f64) -> Result<f64> {
        self.check_z(z)?;
        Ok(self.mu_y.forward(&concat_z_t(z, self.z_dim, &[x_star]))?[0])
    }
}

impl OutcomeModel for CemeModel {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn mu_y_batch(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        let input = concat_z_t(z, self.z_dim, t);
        self.mu_y
            .forward_batch(&input, t.len())
            .expect("z rows match treatment count")
    }

    fn outcome_sd(&self) -> f64 {
        self.sigma()
    }
}

/// Which treatment column a regressor conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    /// `x*` (Oracle).
    True,
    /// `x` (Naive).
    Observed,
}

impl Treatment {
    pub fn column<'a>(self, d: &'a Dataset) -> Result<&'a [f64]> {
        match self {
            Treatment::True => d.x_star(),
            Treatment::Observed => Ok(&d.x),
        }
    }
}

/// MSE-trained `μ_Y(z, t)` with a post-fit residual scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub z_dim: usize,
    pub treatment: Treatment,
    pub mu_y: Mlp,
    /// Root mean squared training residual of the fitted network.
    pub sigma_hat: f64,
}

impl Regressor {
    pub fn new<R: Rng + ?Sized>(
        z_dim: usize,
        hidden: &[usize],
        treatment: Treatment,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            z_dim,
            treatment,
            mu_y: Mlp::with_hidden(z_dim + 1, hidden, 1, rng)?,
            sigma_hat: 1.0,
        })
    }

    pub fn predict(&self, z: &[f64], t: f64) -> Result<f64> {
        check_len("covariate vector", self.z_dim, z.len())?;
        Ok(self.mu_y.forward(&concat_z_t(z, self.z_dim, &[t]))?[0])
    }
}

impl OutcomeModel for Regressor {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn mu_y_batch(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        let input = concat_z_t(z, self.z_dim, t);
        self.mu_y
            .forward_batch(&input, t.len())
            .expect("z rows match treatment count")
    }

    fn outcome_sd(&self) -> f64 {
        self.sigma_hat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Latent(CemeModel),
    Regressor(Regressor),
}

/// A trained model of any variant; the checkpoint unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub variant: Variant,
    pub body: ModelBody,
}

impl FittedModel {
    pub fn as_outcome_model(&self) -> &dyn OutcomeModel {
        match &self.body {
            ModelBody::Latent(m) => m,
            ModelBody::Regressor(r) => r,
        }
    }

    /// Learned `τ` (CEME only).
    pub fn learned_tau(&self) -> Option<f64> {
        match (&self.body, self.variant) {
            (ModelBody::Latent(m), Variant::Ceme) => Some(m.tau()),
            _ => None,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.as_outcome_model().outcome_sd()
    }
}

/// Monte-Carlo adjustment: `(1/M) Σ_m N(y | μ_Y(z_m, x*), σ²)` on `y_grid`,
/// with `z_sample` row-major `M × z_dim`.
pub fn interventional_density(
    model: &(impl OutcomeModel + ?Sized),
    x_star: f64,
    y_grid: &[f64],
    z_sample: &[f64],
) -> Result<Vec<f64>> {
    let d = model.z_dim();
    if z_sample.is_empty() || z_sample.len() % d != 0 {
        return Err(Error::Empty("z sample"));
    }
    if y_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("y grid must be strictly increasing"));
    }
    let m = z_sample.len() / d;
    let mu = model.mu_y_batch(z_sample, &vec![x_star; m]);
    Ok(mixture_density(&mu, model.outcome_sd(), y_grid))
}

/// Equal-weight Gaussian mixture with common scale evaluated on `ys`.
pub(crate) fn mixture_density(means: &[f64], sd: f64, ys: &[f64]) -> Vec<f64> {
    let inv_m = 1.0 / means.len() as f64;
    ys.iter()
        .map(|&y| means.iter().map(|&m| normal_pdf(y, m, sd)).sum::<f64>() * inv_m)
        .collect()
}

/// Human-readable name of the variant set in a list, for error messages.
pub fn variant_list(vs: &[Variant]) -> String {
    let mut s = String::new();
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(v.as_str());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, trapezoid, linspace, normal_cdf};
    use crate::rng::{standard_normals, stream};

    /// Zero-weight model: all means 0 (biases), all scales 1.
    fn unit_model(z_dim: usize) -> CemeModel {
        let mut m = CemeModel::new(z_dim, &[4], 1.0, 1.0, None, &mut stream(0, 0)).unwrap();
        for net in [
            &mut m.mu_xstar,
            &mut m.sigma_xstar,
            &mut m.mu_y,
            &mut m.encoder_mu,
            &mut m.encoder_sigma,
        ] {
            net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        }
        let one = softplus_inv(1.0);
        m.sigma_xstar.bias_mut(1)[0] = one;
        m.encoder_sigma.bias_mut(1)[0] = one;
        m
    }

    #[test]
    fn log_joint_of_three_standard_normals() {
        let m = unit_model(1);
        let v = m.decoder_log_joint(&[0.4], 0.0, 0.0, 0.0).unwrap();
        assert!((v - 3.0 * -HALF_LN_2PI).abs() < 1e-12);
        assert!((v + 2.756_815_599_614_018).abs() < 1e-9);
    }

    #[test]
    fn log_joint_is_shift_invariant_in_y() {
        let mut m = CemeModel::new(1, &[5, 5], 0.7, 0.4, None, &mut stream(2, 0)).unwrap();
        let base = m.decoder_log_joint(&[0.3], 0.2, -0.1, 1.5).unwrap();
        let c = 2.5;
        let last = m.mu_y.n_layers() - 1;
        m.mu_y.bias_mut(last)[0] += c;
        let shifted = m.decoder_log_joint(&[0.3], 0.2, -0.1, 1.5 + c).unwrap();
        assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn log_joint_matches_scalar_gaussian_routine() {
        // Independent scalar log-pdf: ln(exp(−u²/2)/(s√(2π))).
        fn lp(x: f64, m: f64, s: f64) -> f64 {
            let u = (x - m) / s;
            libm::log(libm::exp(-0.5 * u * u) / (s * libm::sqrt(2.0 * core::f64::consts::PI)))
        }
        let mut rng = stream(3, 0);
        let m = CemeModel::new(2, &[6, 6], 0.3, 0.8, None, &mut rng).unwrap();
        for k in 0..100 {
            let r = standard_normals(&mut stream(3, 1 + k), 5);
            let z = [r[0], r[1]];
            let (xs, x, y) = (r[2], r[2] + 0.3 * r[3], r[4]);
            let m1 = m.mu_xstar.forward(&z).unwrap()[0];
            let s1 = softplus(m.sigma_xstar.forward(&z).unwrap()[0]);
            let my = m.mu_y.forward(&[z[0], z[1], xs]).unwrap()[0];
            let expect = lp(xs, m1, s1) + lp(x, xs, m.tau()) + lp(y, my, m.sigma());
            let got = m.decoder_log_joint(&z, xs, x, y).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn encoder_sample_at_mean() {
        let m = CemeModel::new(1, &[5], 0.3, 0.8, None, &mut stream(4, 0)).unwrap();
        let (mu, sd) = m.encoder_params(&[0.2], 1.0, -0.5).unwrap();
        let (s, lq) = m.encoder_sample(&[0.2], 1.0, -0.5, 0.0).unwrap();
        assert_eq!(s, mu);
        assert!((lq - (-libm::log(sd) - HALF_LN_2PI)).abs() < 1e-14);
        assert!(m.encoder_sample(&[0.2], 1.0, -0.5, f64::NAN).is_err());
    }

    #[test]
    fn encoder_samples_pass_kolmogorov_smirnov() {
        let m = CemeModel::new(1, &[5], 0.3, 0.8, None, &mut stream(5, 0)).unwrap();
        let (mu, sd) = m.encoder_params(&[-0.4], 0.5, 0.1).unwrap();
        let n = 100_000;
        let eps = standard_normals(&mut stream(5, 1), n);
        let mut s: Vec<f64> = eps
            .iter()
            .map(|&e| m.encoder_sample(&[-0.4], 0.5, 0.1, e).unwrap().0)
            .collect();
        s.sort_by(|a, b| a.total_cmp(b));
        let d = s
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal_cdf((v - mu) / sd);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value ≈ 1.628/√n
        assert!(d < 1.628 / libm::sqrt(n as f64), "KS statistic {d}");
    }

    #[test]
    fn sampling_with_vanishing_tau() {
        let m = CemeModel::new(1, &[5], 1.0, 0.5, Some(1e-12), &mut stream(6, 0)).unwrap();
        let z = standard_normals(&mut stream(6, 1), 200);
        let (xs, x, _) = m.sample_scm(&z, &mut stream(6, 2)).unwrap();
        for (a, b) in xs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
        let (xs2, _, _) = m.sample_scm(&z, &mut stream(6, 2)).unwrap();
        assert_eq!(xs, xs2);
        assert!(m.sample_scm(&[], &mut stream(6, 2)).is_err());
    }

    #[test]
    fn sampled_measurement_error_is_centered() {
        let m = CemeModel::new(1, &[5], 0.6, 0.5, None, &mut stream(7, 0)).unwrap();
        let n = 100_000;
        let z = standard_normals(&mut stream(7, 1), n);
        let (xs, x, _) = m.sample_scm(&z, &mut stream(7, 2)).unwrap();
        let dx: Vec<f64> = x.iter().zip(&xs).map(|(a, b)| a - b).collect();
        let se = m.tau() / libm::sqrt(n as f64);
        assert!(mean(&dx).abs() < 4.0 * se);
    }

    #[test]
    fn sampled_outcome_recovers_mu_y_in_bins() {
        // Binned conditional means of y given x* (z fixed) match μ_Y.
        let m = CemeModel::new(1, &[6], 0.4, 0.5, None, &mut stream(8, 0)).unwrap();
        let n = 100_000;
        let z = vec![0.3; n];
        let (xs, _, y) = m.sample_scm(&z, &mut stream(8, 1)).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        for chunk in order.chunks(n / 10) {
            let resid: Vec<f64> = chunk
                .iter()
                .map(|&i| y[i] - m.predict_mu_y(&[0.3], xs[i]).unwrap())
                .collect();
            let se = m.sigma() / libm::sqrt(chunk.len() as f64);
            assert!(mean(&resid).abs() < 3.0 * se);
        }
    }

    #[test]
    fn predict_is_the_mu_y_network() {
        let m = unit_model(1);
        assert_eq!(m.predict_mu_y(&[3.0], -2.0).unwrap(), 0.0);
        let m = CemeModel::new(2, &[5], 0.3, 0.8, None, &mut stream(9, 0)).unwrap();
        assert_eq!(
            m.predict_mu_y(&[0.1, 0.2], 0.3).unwrap(),
            m.mu_y.forward(&[0.1, 0.2, 0.3]).unwrap()[0]
        );
    }

    #[test]
    fn density_collapses_when_z_irrelevant() {
        let mut r = Regressor::new(1, &[3], Treatment::True, &mut stream(10, 0)).unwrap();
        r.mu_y.params_mut().iter_mut().for_each(|p| *p = 0.0);
        r.mu_y.bias_mut(1)[0] = 0.7;
        r.sigma_hat = 0.5;
        let ys = linspace(-2.0, 3.0, 11);
        let d = interventional_density(&r, 1.0, &ys, &[-1.0, 0.0, 2.0]).unwrap();
        for (y, p) in ys.iter().zip(d) {
            assert!((p - normal_pdf(*y, 0.7, 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn density_two_point_mixture_and_normalization() {
        // μ_Y(z, t) = z via an affine network.
        let mut r = Regressor::new(1, &[], Treatment::True, &mut stream(11, 0)).unwrap();
        r.mu_y.params_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
        r.sigma_hat = 1.0;
        let ys = linspace(-4.0, 4.0, 20);
        let d = interventional_density(&r, 0.5, &ys, &[-1.0, 1.0]).unwrap();
        for (y, p) in ys.iter().zip(&d) {
            let s = 1.0 / libm::sqrt(2.0 * core::f64::consts::PI);
            let expect = 0.5 * s * (libm::exp(-0.5 * (y + 1.0) * (y + 1.0)) + libm::exp(-0.5 * (y - 1.0) * (y - 1.0)));
            assert!((p - expect).abs() < 1e-12);
        }
        let grid = linspace(-8.0, 8.0, 2001);
        let dens = interventional_density(&r, 0.5, &grid, &[-1.0, 1.0]).unwrap();
        assert!((trapezoid(&grid, &dens) - 1.0).abs() < 1e-3);
        // Shifting every mean by c shifts the density's mean by c.
        let m0: f64 = trapezoid(&grid, &grid.iter().zip(&dens).map(|(y, p)| y * p).collect::<Vec<_>>());
        r.mu_y.params_mut()[2] = 0.75;
        let dens2 = interventional_density(&r, 0.5, &grid, &[-1.0, 1.0]).unwrap();
        let m1: f64 = trapezoid(&grid, &grid.iter().zip(&dens2).map(|(y, p)| y * p).collect::<Vec<_>>());
        assert!((m1 - m0 - 0.75).abs() < 1e-6);
        assert!(interventional_density(&r, 0.5, &grid, &[]).is_err());
        assert!(interventional_density(&r, 0.5, &[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("ceme++".parse::<Variant>().is_err());
        assert_eq!(variant_list(&Variant::ALL), "ceme, ceme_plus, oracle, naive");
    }
}
