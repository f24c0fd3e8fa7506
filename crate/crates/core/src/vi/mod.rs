//! Training: the importance-weighted objective for the latent models, MSE for
//! the baselines, plateau-based learning-rate reduction, early stopping and
//! restart selection.

mod elbo;

pub use elbo::{decoder_log_joint_grad, iw_elbo, iw_elbo_grad, iw_elbo_with_eps, Batch};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{concat_z_t, Dataset};
use crate::error::{Error, Result};
use crate::math::sample_sd;
use crate::nnet::{AdamConfig, AdamState, Mlp};
use crate::rng::{mix_seed, permutation, standard_normals, stream};
use crate::scm::{CemeModel, FittedModel, ModelBody, Regressor, Treatment, Variant};

/// Evaluation chunk for validation passes; bounds peak memory only.
const EVAL_CHUNK: usize = 256;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden-layer widths shared by every network of the model.
    pub hidden: Vec<usize>,
    pub n_importance_samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub initial_term_weight: f64,
    pub anneal_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Synthetic-experiment defaults for a variant and training-set size.
    pub fn synthetic(variant: Variant, n_train: usize) -> Self {
        let latent = variant.is_latent();
        Self {
            hidden: vec![20; 3],
            n_importance_samples: 32,
            batch_size: if latent && n_train >= 16_000 { 256 } else { 64 },
            learning_rate: match (latent, n_train >= 16_000) {
                (true, true) => 0.01,
                (true, false) => 0.003,
                (false, _) => 0.001,
            },
            weight_decay: 0.0,
            initial_term_weight: 4.0,
            anneal_epochs: 10,
            lr_patience: 30,
            lr_factor: 0.1,
            early_stop_patience: 40,
            beta1: 0.9,
            beta2: 0.97,
            max_epochs: 2000,
            restarts: 6,
            seed: 0,
        }
    }

    /// Education-wage defaults (all variants).
    pub fn education_wage() -> Self {
        Self {
            hidden: vec![26; 3],
            n_importance_samples: 32,
            batch_size: 32,
            learning_rate: 0.001,
            weight_decay: 0.001,
            initial_term_weight: 8.0,
            anneal_epochs: 5,
            lr_patience: 25,
            lr_factor: 0.1,
            early_stop_patience: 45,
            beta1: 0.9,
            beta2: 0.97,
            max_epochs: 2000,
            restarts: 6,
            seed: 0,
        }
    }

    /// Synthetic outcome network for the semisynthetic benchmark.
    pub fn outcome_network() -> Self {
        Self { hidden: vec![30; 5], weight_decay: 0.01, restarts: 1, ..Self::education_wage() }
    }

    /// `max_epochs` may be zero; every other count must be positive.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_importance_samples", self.n_importance_samples),
            ("batch_size", self.batch_size),
            ("anneal_epochs", self.anneal_epochs),
            ("lr_patience", self.lr_patience),
            ("early_stop_patience", self.early_stop_patience),
            ("restarts", self.restarts),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::invalid("lr_factor must lie in (0, 1)"));
        }
        if !(self.initial_term_weight >= 1.0) {
            return Err(Error::invalid("initial_term_weight must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive, weight decay non-negative"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// Linear decay from `initial_term_weight` at epoch 0 to 1 at `anneal_epochs`.
pub fn anneal_weight(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.anneal_epochs {
        return 1.0;
    }
    let frac = epoch as f64 / cfg.anneal_epochs as f64;
    cfg.initial_term_weight + (1.0 - cfg.initial_term_weight) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub term_weight: f64,
    pub learning_rate: f64,
    #[serde(with = "crate::ser")]
    pub train_loss: f64,
    #[serde(with = "crate::ser")]
    pub val_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
    Diverged,
}

/// Outcome of one training run. `val_scores()` is the initial score followed
/// by one score per completed epoch; `best_val_score` is its minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(with = "crate::ser")]
    pub initial_val_score: f64,
    pub history: Vec<EpochRecord>,
    #[serde(with = "crate::ser")]
    pub best_val_score: f64,
    /// `None` when the initial model was never beaten.
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
    pub failed: bool,
    pub failure: Option<String>,
    /// Set by the caller; kept out of serialized output so records replay
    /// byte-identically.
    #[serde(skip)]
    pub wall_time_secs: Option<f64>,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn val_scores(&self) -> Vec<f64> {
        core::iter::once(self.initial_val_score)
            .chain(self.history.iter().map(|e| e.val_score))
            .collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.train_loss).collect()
    }
}

/// Mean negative bound at β = 1 over `data`, with noise from a fixed stream.
pub fn ceme_validation_score(m: &CemeModel, data: &Dataset, k: usize, seed: u64) -> Result<f64> {
    let all = Batch::of(data);
    let mut rng = stream(seed, STREAM_EVAL);
    let mut total = 0.0;
    let n = all.len();
    let mut lo = 0;
    while lo < n {
        let hi = (lo + EVAL_CHUNK).min(n);
        total += iw_elbo(m, &all.slice(lo, hi), k, 1.0, &mut rng)?;
        lo = hi;
    }
    Ok(-total / n as f64)
}

/// Mean squared error of a regressor on `data`.
pub fn regressor_mse(r: &Regressor, data: &Dataset) -> Result<f64> {
    let t = r.treatment.column(data)?;
    let input = concat_z_t(&data.z, data.z_dim, t);
    let pred = r.mu_y.forward_batch(&input, data.len())?;
    Ok(pred.iter().zip(&data.y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / data.len() as f64)
}

/// What a training loop needs from a model type.
trait Trainable: Clone {
    type Grads;
    fn zero_grads(&self) -> Self::Grads;
    fn n_trainable(&self) -> usize;
    /// Mean minibatch loss; its gradient is added into `g`.
    fn batch_loss(&self, data: &Dataset, idx: &[usize], beta: f64, cfg: &TrainConfig, noise: &mut crate::rng::StreamRng, g: &mut Self::Grads) -> Result<f64>;
    fn grads_finite(g: &Self::Grads) -> bool;
    fn apply(&mut self, adam: &mut AdamState, g: &Self::Grads) -> Result<()>;
    fn val_score(&self, val: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<f64>;
    fn finite(&self) -> bool;
}

impl Trainable for CemeModel {
    type Grads = crate::scm::CemeGrads;

    fn zero_grads(&self) -> Self::Grads {
        CemeModel::zero_grads(self)
    }

    fn n_trainable(&self) -> usize {
        CemeModel::n_trainable(self)
    }

    fn batch_loss(&self, data: &Dataset, idx: &[usize], beta: f64, cfg: &TrainConfig, noise: &mut crate::rng::StreamRng, g: &mut Self::Grads) -> Result<f64> {
        let sub = data.select(idx);
        let b = Batch::of(&sub);
        let k = cfg.n_importance_samples;
        let eps = standard_normals(noise, b.len() * k);
        let scale = -1.0 / b.len() as f64;
        Ok(iw_elbo_grad(self, &b, k, beta, &eps, scale, g)? * scale)
    }

    fn grads_finite(g: &Self::Grads) -> bool {
        g.all_finite()
    }

    fn apply(&mut self, adam: &mut AdamState, g: &Self::Grads) -> Result<()> {
        adam.step_groups(&mut self.param_groups(g))
    }

    fn val_score(&self, val: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
        ceme_validation_score(self, val, cfg.n_importance_samples, seed)
    }

    fn finite(&self) -> bool {
        self.all_finite()
    }
}

impl Trainable for Regressor {
    type Grads = Vec<f64>;

    fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.mu_y.n_params()]
    }

    fn n_trainable(&self) -> usize {
        self.mu_y.n_params()
    }

    fn batch_loss(&self, data: &Dataset, idx: &[usize], _beta: f64, _cfg: &TrainConfig, _noise: &mut crate::rng::StreamRng, g: &mut Vec<f64>) -> Result<f64> {
        let t = self.treatment.column(data)?;
        let d = data.z_dim;
        let mut input = Vec::with_capacity(idx.len() * (d + 1));
        for &i in idx {
            input.extend_from_slice(data.z_row(i));
            input.push(t[i]);
        }
        let tape = self.mu_y.forward_tape(input, idx.len())?;
        let inv_n = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        let d_out: Vec<f64> = tape
            .output()
            .iter()
            .zip(idx)
            .map(|(p, &i)| {
                let e = p - data.y[i];
                loss += e * e;
                2.0 * e * inv_n
            })
            .collect();
        self.mu_y.backward(&tape, &d_out, g, false)?;
        Ok(loss * inv_n)
    }

    fn grads_finite(g: &Vec<f64>) -> bool {
        g.iter().all(|v| v.is_finite())
    }

    fn apply(&mut self, adam: &mut AdamState, g: &Vec<f64>) -> Result<()> {
        adam.step(self.mu_y.params_mut(), g)
    }

    fn val_score(&self, val: &Dataset, _cfg: &TrainConfig, _seed: u64) -> Result<f64> {
        regressor_mse(self, val)
    }

    fn finite(&self) -> bool {
        self.mu_y.all_finite()
    }
}

fn check_inputs(train: &Dataset, val: &Dataset, z_dim: usize, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training and validation sets must be nonempty"));
    }
    if train.z_dim != z_dim || val.z_dim != z_dim {
        return Err(Error::Shape { what: "covariate width", expected: z_dim, got: train.z_dim });
    }
    Ok(())
}

/// Shared loop. Non-finite values trigger one recovery (restore best, reset
/// Adam, reduce the learning rate); a second occurrence ends the run as failed.
fn fit<M: Trainable>(
    model: &mut M,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    let mut adam = AdamState::new(model.n_trainable(), cfg.adam());
    let mut shuffle = stream(seed, STREAM_SHUFFLE);
    let mut noise = stream(seed, STREAM_NOISE);
    let initial = model.val_score(val, cfg, seed);
    let mut record = RunRecord {
        seed,
        initial_val_score: f64::INFINITY,
        history: Vec::new(),
        best_val_score: f64::INFINITY,
        best_epoch: None,
        stop_reason: StopReason::MaxEpochs,
        failed: false,
        failure: None,
        wall_time_secs: None,
        checkpoint: None,
    };
    match initial {
        Ok(v) if v.is_finite() => {
            record.initial_val_score = v;
            record.best_val_score = v;
        }
        Ok(_) | Err(Error::NonFinite { .. }) => {
            record.failed = true;
            record.failure = Some("initial validation score is not finite".into());
            record.stop_reason = StopReason::Diverged;
            return Ok(record);
        }
        Err(e) => return Err(e),
    }
    let mut best = model.clone();
    let mut since_lr = 0usize;
    let mut since_best = 0usize;
    let mut recovered = false;

    for epoch in 0..cfg.max_epochs {
        let beta = anneal_weight(epoch, cfg);
        let order = permutation(&mut shuffle, train.len());
        let mut loss_sum = 0.0;
        let mut diverged: Option<String> = None;
        for idx in order.chunks(cfg.batch_size) {
            let mut g = model.zero_grads();
            match model.batch_loss(train, idx, beta, cfg, &mut noise, &mut g) {
                Ok(l) if l.is_finite() && M::grads_finite(&g) => {
                    model.apply(&mut adam, &g)?;
                    loss_sum += l * idx.len() as f64;
                }
                Ok(_) => diverged = Some(format!("non-finite training loss in epoch {epoch}")),
                Err(Error::NonFinite { term, index }) => {
                    diverged = Some(format!("non-finite {term} at sample {index} in epoch {epoch}"))
                }
                Err(e) => return Err(e),
            }
            if diverged.is_none() && !model.finite() {
                diverged = Some(format!("non-finite parameters in epoch {epoch}"));
            }
            if diverged.is_some() {
                break;
            }
        }
        let val_score = if diverged.is_none() {
            match model.val_score(val, cfg, seed) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    diverged = Some(format!("non-finite validation score in epoch {epoch}"));
                    f64::NAN
                }
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };
        if let Some(why) = diverged {
            *model = best.clone();
            if recovered {
                record.failed = true;
                record.failure = Some(why);
                record.stop_reason = StopReason::Diverged;
                return Ok(record);
            }
            recovered = true;
            adam.reset();
            adam.set_learning_rate(adam.learning_rate() * cfg.lr_factor);
            since_lr = 0;
            continue;
        }
        let entry = EpochRecord {
            epoch,
            term_weight: beta,
            learning_rate: adam.learning_rate(),
            train_loss: loss_sum / train.len() as f64,
            val_score,
        };
        observer(&entry);
        record.history.push(entry);
        if val_score < record.best_val_score {
            record.best_val_score = val_score;
            record.best_epoch = Some(epoch);
            best = model.clone();
            since_lr = 0;
            since_best = 0;
        } else {
            since_lr += 1;
            since_best += 1;
        }
        if since_best >= cfg.early_stop_patience {
            record.stop_reason = StopReason::EarlyStopping;
            break;
        }
        if since_lr >= cfg.lr_patience {
            adam.set_learning_rate(adam.learning_rate() * cfg.lr_factor);
            since_lr = 0;
        }
    }
    *model = best;
    Ok(record)
}

/// Trains a latent model in place and leaves it at its best-validation state.
pub fn train_ceme(
    model: &mut CemeModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    check_inputs(train, val, model.z_dim, cfg)?;
    fit(model, train, val, cfg, seed, observer)
}

/// Trains a regressor in place, then sets `sigma_hat` from training residuals.
pub fn train_regressor(
    r: &mut Regressor,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    check_inputs(train, val, r.z_dim, cfg)?;
    r.treatment.column(train)?;
    r.treatment.column(val)?;
    let rec = fit(r, train, val, cfg, seed, observer)?;
    r.sigma_hat = libm::sqrt(regressor_mse(r, train)?);
    Ok(rec)
}

/// Index of the lowest validation score among non-failed runs.
pub fn select_best(records: &[RunRecord]) -> Result<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.failed && r.best_val_score.is_finite())
        .min_by(|a, b| a.1.best_val_score.total_cmp(&b.1.best_val_score))
        .map(|(i, _)| i)
        .ok_or(Error::AllRestartsFailed(records.len()))
}

/// Per-restart seed.
pub fn restart_seed(base: u64, restart: usize) -> u64 {
    mix_seed(base, restart as u64)
}

/// Trains one fresh model of `variant`. `known_tau` is required for CEME⁺.
pub fn fit_variant(
    variant: Variant,
    train: &Dataset,
    val: &Dataset,
    known_tau: Option<f64>,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(FittedModel, RunRecord)> {
    let mut init = stream(seed, STREAM_INIT);
    let (body, rec) = match variant {
        Variant::Ceme | Variant::CemePlus => {
            let tau_fixed = if variant == Variant::CemePlus {
                Some(known_tau.ok_or(Error::invalid("ceme_plus needs the known tau"))?)
            } else {
                None
            };
            let mut m = CemeModel::for_data(train, &cfg.hidden, tau_fixed, &mut init)?;
            let rec = train_ceme(&mut m, train, val, cfg, seed, observer)?;
            (ModelBody::Latent(m), rec)
        }
        Variant::Oracle | Variant::Naive => {
            let t = if variant == Variant::Oracle { Treatment::True } else { Treatment::Observed };
            let mut r = Regressor::new(train.z_dim, &cfg.hidden, t, &mut init)?;
            let rec = train_regressor(&mut r, train, val, cfg, seed, observer)?;
            (ModelBody::Regressor(r), rec)
        }
    };
    Ok((FittedModel { variant, body }, rec))
}

#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub chosen: usize,
    pub model: FittedModel,
    pub records: Vec<RunRecord>,
}

/// `cfg.restarts` independent fits; keeps the best non-failed run.
pub fn best_of_restarts(
    variant: Variant,
    train: &Dataset,
    val: &Dataset,
    known_tau: Option<f64>,
    cfg: &TrainConfig,
) -> Result<RestartOutcome> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.restarts);
    let mut models = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let (m, rec) = fit_variant(variant, train, val, known_tau, cfg, restart_seed(cfg.seed, r), &mut |_| {})?;
        models.push(m);
        records.push(rec);
    }
    let chosen = select_best(&records)?;
    Ok(RestartOutcome { chosen, model: models.swap_remove(chosen), records })
}

/// Residual standard deviation of a fitted network on its training inputs.
pub fn residual_sd(net: &Mlp, input: &[f64], y: &[f64]) -> Result<f64> {
    let pred = net.forward_batch(input, y.len())?;
    let r: Vec<f64> = pred.iter().zip(y).map(|(p, t)| t - p).collect();
    Ok(sample_sd(&r))
}

#[cfg(test)]
mod tests;
