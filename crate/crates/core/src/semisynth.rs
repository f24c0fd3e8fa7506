//! Semisynthetic benchmarks from a real table: cleaning and standardization,
//! a learned outcome mechanism that becomes exact ground truth, treatment
//! noise at several levels, and a rounded three-way split.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{concat_z_t, Dataset};
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::math::{mean, sample_sd};
use crate::nnet::Mlp;
use crate::rng::{permutation, standard_normal, stream};
use crate::scm::{OutcomeModel, Treatment, Variant};
use crate::vi::{fit_variant, residual_sd, RunRecord, TrainConfig};

/// Column-named table with missing cells as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }
}

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    /// Take the natural log of the outcome before standardizing.
    #[serde(default)]
    pub log_outcome: bool,
}

impl ColumnSpec {
    /// Covariates of the NLSYM extract used for the education-wage study:
    /// every variable except `black`, the treatment `educ` and the outcome
    /// `wage` (log-transformed).
    pub fn education_wage() -> Self {
        let mut covariates: Vec<String> =
            ["id", "nearc2", "nearc4", "age", "momdad14", "sinmom14", "step14"]
                .iter()
                .map(|s| (*s).into())
                .collect();
        covariates.extend((661..=669).map(|k| format!("reg{k}")));
        covariates.extend(
            ["south66", "smsa", "south", "smsa66", "enroll", "married", "libcrd14"]
                .iter()
                .map(|s| (*s).into()),
        );
        Self { covariates, treatment: "educ".into(), outcome: "wage".into(), log_outcome: true }
    }

    /// Covariates of [`stand_in_table`].
    pub fn stand_in() -> Self {
        Self {
            covariates: (1..=5).map(|k| format!("c{k}")).collect(),
            treatment: "educ".into(),
            outcome: "wage".into(),
            log_outcome: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSpec {
    pub covariate_columns: Vec<String>,
    pub treatment_column: String,
    pub outcome_column: String,
    /// Rows kept after dropping missing values.
    pub rows: usize,
    pub rows_dropped: usize,
}

/// Standardized arrays; `z` is row-major `rows × covariates`.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanTable {
    pub spec: TabularSpec,
    pub z: Vec<f64>,
    pub x_star: Vec<f64>,
    pub y: Vec<f64>,
    /// Indices into the raw table of the kept rows.
    pub kept_rows: Vec<usize>,
}

fn standardize(name: &str, v: &mut [f64]) -> Result<()> {
    let m = mean(v);
    let s = sample_sd(v);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::ZeroVariance(name.to_owned()));
    }
    v.iter_mut().for_each(|x| *x = (*x - m) / s);
    Ok(())
}

/// Drops rows with a missing value in any used column and standardizes
/// every used column to sample mean 0 and sample SD 1.
pub fn clean_and_standardize(raw: &RawTable, spec: &ColumnSpec) -> Result<CleanTable> {
    if raw.rows.is_empty() {
        return Err(Error::Empty("table"));
    }
    if spec.covariates.is_empty() {
        return Err(Error::invalid("at least one covariate is required"));
    }
    let cov_idx: Vec<usize> =
        spec.covariates.iter().map(|c| raw.column_index(c)).collect::<Result<_>>()?;
    let t_idx = raw.column_index(&spec.treatment)?;
    let y_idx = raw.column_index(&spec.outcome)?;
    let d = cov_idx.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); d];
    let (mut x_star, mut y, mut kept) = (Vec::new(), Vec::new(), Vec::new());
    for (r, row) in raw.rows.iter().enumerate() {
        if row.len() != raw.headers.len() {
            return Err(Error::Shape { what: "table row", expected: raw.headers.len(), got: row.len() });
        }
        let used = cov_idx.iter().chain([&t_idx, &y_idx]);
        if used.clone().any(|&c| !row[c].is_some_and(f64::is_finite)) {
            continue;
        }
        for (col, &c) in cols.iter_mut().zip(&cov_idx) {
            col.push(row[c].unwrap());
        }
        x_star.push(row[t_idx].unwrap());
        let out = row[y_idx].unwrap();
        if spec.log_outcome && !(out > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "outcome `{}` must be positive to take logs (row {r})",
                spec.outcome
            )));
        }
        y.push(if spec.log_outcome { crate::math::fm::log(out) } else { out });
        kept.push(r);
    }
    let n = kept.len();
    if n < 2 {
        return Err(Error::Empty("fewer than two complete rows"));
    }
    for (col, name) in cols.iter_mut().zip(&spec.covariates) {
        standardize(name, col)?;
    }
    standardize(&spec.treatment, &mut x_star)?;
    standardize(&spec.outcome, &mut y)?;
    let mut z = Vec::with_capacity(n * d);
    for i in 0..n {
        z.extend(cols.iter().map(|c| c[i]));
    }
    Ok(CleanTable {
        spec: TabularSpec {
            covariate_columns: spec.covariates.clone(),
            treatment_column: spec.treatment.clone(),
            outcome_column: spec.outcome.clone(),
            rows: n,
            rows_dropped: raw.rows.len() - n,
        },
        z,
        x_star,
        y,
        kept_rows: kept,
    })
}

/// The learned outcome mechanism `μ_Y(z, x*)` plus its noise and the
/// treatment-noise scale of one benchmark level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemisyntheticTruth {
    pub z_dim: usize,
    pub net: Mlp,
    pub delta_y_sd: f64,
    pub tau: f64,
}

impl OutcomeModel for SemisyntheticTruth {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn mu_y_batch(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        let input = concat_z_t(z, self.z_dim, t);
        self.net.forward_batch(&input, t.len()).expect("z rows match treatment count")
    }

    fn outcome_sd(&self) -> f64 {
        self.delta_y_sd
    }
}

impl GroundTruth for SemisyntheticTruth {
    fn tau(&self) -> f64 {
        self.tau
    }

    fn standard_normal_z(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub y_synth: Vec<f64>,
    pub net: Mlp,
    pub residual_sd: f64,
    pub delta_y_sd: f64,
    pub record: RunRecord,
}

/// Fits `y_real ~ (z, x*)` on all rows, then draws
/// `y = net(z, x*) + N(0, (noise_fraction·s)²)` with `s` the residual SD.
pub fn make_synthetic_outcome(
    z: &[f64],
    z_dim: usize,
    x_star: &[f64],
    y_real: &[f64],
    noise_fraction: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<OutcomeFit> {
    if !(noise_fraction >= 0.0) {
        return Err(Error::invalid("noise fraction must be non-negative"));
    }
    let all = Dataset::new(z_dim, z.to_vec(), Some(x_star.to_vec()), x_star.to_vec(), y_real.to_vec())?;
    let (fitted, record) = fit_variant(Variant::Oracle, &all, &all, None, cfg, seed, &mut |_| {})?;
    if record.failed {
        return Err(Error::InvalidArgument(format!(
            "outcome network diverged: {}",
            record.failure.clone().unwrap_or_default()
        )));
    }
    let crate::scm::ModelBody::Regressor(reg) = fitted.body else {
        unreachable!("oracle fits a regressor")
    };
    debug_assert_eq!(reg.treatment, Treatment::True);
    let net = reg.mu_y;
    let input = concat_z_t(z, z_dim, x_star);
    let s = residual_sd(&net, &input, y_real)?;
    let delta = noise_fraction * s;
    let mean_y = net.forward_batch(&input, x_star.len())?;
    let mut rng = stream(seed, 1_000);
    let y_synth = mean_y.iter().map(|m| m + delta * standard_normal(&mut rng)).collect();
    Ok(OutcomeFit { y_synth, net, residual_sd: s, delta_y_sd: delta, record })
}

/// `x = x* + N(0, (ρ·sd(x*))²)` per level, each from its own stream.
pub fn inject_treatment_noise(x_star: &[f64], levels: &[f64], seed: u64) -> Result<Vec<(f64, Vec<f64>)>> {
    if levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("noise levels must be finite and non-negative"));
    }
    let sd = sample_sd(x_star);
    Ok(levels
        .iter()
        .map(|&rho| {
            let mut rng = stream(seed, rho.to_bits());
            let x = x_star.iter().map(|v| v + rho * sd * standard_normal(&mut rng)).collect();
            (rho, x)
        })
        .collect())
}

/// Nearest-integer sizes; the largest split absorbs any rounding remainder.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::invalid("fractions must be non-negative"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fractions must sum to 1"));
    }
    if n < fractions.len() {
        return Err(Error::invalid("fewer rows than splits"));
    }
    let mut sizes: Vec<usize> = fractions.iter().map(|f| libm::round(f * n as f64) as usize).collect();
    let largest = (0..fractions.len())
        .max_by(|&a, &b| fractions[a].total_cmp(&fractions[b]).then(b.cmp(&a)))
        .expect("nonempty");
    let total: usize = sizes.iter().sum();
    sizes[largest] = (sizes[largest] + n).checked_sub(total).ok_or(Error::invalid("rounding overflow"))?;
    Ok(sizes)
}

/// Shuffled partition of `0..n` with [`split_sizes`].
pub fn split(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = split_sizes(n, fractions)?;
    let perm = permutation(&mut stream(seed, 2_000), n);
    let mut out = Vec::with_capacity(sizes.len());
    let mut lo = 0;
    for s in sizes {
        out.push(perm[lo..lo + s].to_vec());
        lo += s;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisynthConfig {
    pub noise_levels: Vec<f64>,
    pub split_fractions: Vec<f64>,
    /// Outcome noise SD as a fraction of the outcome network's residual SD.
    pub outcome_noise_fraction: f64,
    pub outcome_net: TrainConfig,
}

impl Default for SemisynthConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            split_fractions: vec![0.72, 0.08, 0.20],
            outcome_noise_fraction: 0.1,
            outcome_net: TrainConfig::outcome_network(),
        }
    }
}

/// One noise level: its splits and the truth they share.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLevel {
    pub rho: f64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub truth: SemisyntheticTruth,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: TabularSpec,
    pub levels: Vec<NoiseLevel>,
    /// Row indices (into the cleaned table) of train, val and test.
    pub splits: Vec<Vec<usize>>,
    pub outcome: OutcomeFit,
}

/// The whole pipeline for one table.
pub fn build_benchmark(raw: &RawTable, spec: &ColumnSpec, cfg: &SemisynthConfig, seed: u64) -> Result<Benchmark> {
    if cfg.split_fractions.len() != 3 {
        return Err(Error::invalid("need train, validation and test fractions"));
    }
    let clean = clean_and_standardize(raw, spec)?;
    let d = clean.spec.covariate_columns.len();
    let outcome = make_synthetic_outcome(
        &clean.z,
        d,
        &clean.x_star,
        &clean.y,
        cfg.outcome_noise_fraction,
        &cfg.outcome_net,
        seed,
    )?;
    let splits = split(clean.spec.rows, &cfg.split_fractions, seed)?;
    let sd_x = sample_sd(&clean.x_star);
    let levels = inject_treatment_noise(&clean.x_star, &cfg.noise_levels, seed)?
        .into_iter()
        .map(|(rho, x)| {
            let full = Dataset::new(d, clean.z.clone(), Some(clean.x_star.clone()), x, outcome.y_synth.clone())?;
            Ok(NoiseLevel {
                rho,
                train: full.select(&splits[0]),
                val: full.select(&splits[1]),
                test: full.select(&splits[2]),
                truth: SemisyntheticTruth {
                    z_dim: d,
                    net: outcome.net.clone(),
                    delta_y_sd: outcome.delta_y_sd,
                    tau: rho * sd_x,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { spec: clean.spec, levels, splits, outcome })
}

/// A synthetic substitute for the education-wage table: five covariates, an
/// integer-valued schooling treatment and a positive wage, with `n_missing`
/// extra rows that each lack one value.
pub fn stand_in_table(n_complete: usize, n_missing: usize, seed: u64) -> RawTable {
    let mut rng = stream(seed, 0);
    let mut headers: Vec<String> = (1..=5).map(|k| format!("c{k}")).collect();
    headers.push("educ".into());
    headers.push("wage".into());
    let mut rows = Vec::with_capacity(n_complete + n_missing);
    for r in 0..n_complete + n_missing {
        let c1 = 28.0 + 2.5 * standard_normal(&mut rng);
        let c2 = f64::from(u8::from(rng.random::<f64>() < 0.7));
        let c3 = f64::from(u8::from(rng.random::<f64>() < 0.4));
        let c4 = standard_normal(&mut rng);
        let c5 = libm::floor(rng.random::<f64>() * 9.0);
        let latent = 13.0 + 0.8 * c2 - 0.6 * c3 + 1.2 * c4 + 0.1 * (c1 - 28.0) + 1.5 * standard_normal(&mut rng);
        let educ = libm::round(latent.clamp(1.0, 18.0));
        let log_wage = 5.5 + 0.07 * educ + 0.03 * (c1 - 28.0) - 0.1 * c3 + 0.05 * c4 * educ / 13.0
            + 0.01 * c5
            + 0.35 * standard_normal(&mut rng);
        let mut row = vec![Some(c1), Some(c2), Some(c3), Some(c4), Some(c5), Some(educ), Some(crate::math::fm::exp(log_wage))];
        if r >= n_complete {
            let width = row.len();
            let hole = ((rng.random::<f64>() * width as f64) as usize).min(width - 1);
            row[hole] = None;
        }
        rows.push(row);
    }
    // Interleave incomplete rows so they are not all at the end.
    let perm = permutation(&mut rng, rows.len());
    let rows = perm.into_iter().map(|i| rows[i].clone()).collect();
    RawTable { headers, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, rmse_mu_y, EvalConfig};
    use crate::scm::{FittedModel, ModelBody, Regressor};

    fn quick_outcome_cfg() -> TrainConfig {
        TrainConfig { max_epochs: 3, ..TrainConfig::outcome_network() }
    }

    #[test]
    fn education_wage_spec_has_23_covariates() {
        let s = ColumnSpec::education_wage();
        assert_eq!(s.covariates.len(), 23);
        assert!(!s.covariates.iter().any(|c| c == "black" || c == "educ" || c == "wage"));
    }

    #[test]
    fn cleaning_drops_missing_and_standardizes() {
        let raw = stand_in_table(300, 7, 1);
        let clean = clean_and_standardize(&raw, &ColumnSpec::stand_in()).unwrap();
        assert_eq!((clean.spec.rows, clean.spec.rows_dropped), (300, 7));
        let d = 5;
        let mut cols: Vec<Vec<f64>> = (0..d).map(|j| clean.z.iter().skip(j).step_by(d).cloned().collect()).collect();
        cols.push(clean.x_star.clone());
        cols.push(clean.y.clone());
        for c in &cols {
            assert!(mean(c).abs() < 1e-10);
            assert!((sample_sd(c) - 1.0).abs() < 1e-10);
        }
        for &r in &clean.kept_rows {
            assert!(raw.rows[r].iter().all(Option::is_some));
        }
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let raw = stand_in_table(200, 0, 2);
        let spec = ColumnSpec { log_outcome: false, ..ColumnSpec::stand_in() };
        let once = clean_and_standardize(&raw, &spec).unwrap();
        let mut headers: Vec<String> = spec.covariates.clone();
        headers.push("educ".into());
        headers.push("wage".into());
        let rows = (0..once.spec.rows)
            .map(|i| {
                let mut r: Vec<Option<f64>> = once.z[i * 5..(i + 1) * 5].iter().map(|v| Some(*v)).collect();
                r.push(Some(once.x_star[i]));
                r.push(Some(once.y[i]));
                r
            })
            .collect();
        let twice = clean_and_standardize(&RawTable { headers, rows }, &spec).unwrap();
        for (a, b) in once.z.iter().chain(&once.x_star).chain(&once.y).zip(twice.z.iter().chain(&twice.x_star).chain(&twice.y)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cleaning_errors() {
        let mut raw = stand_in_table(50, 0, 3);
        raw.rows.iter_mut().for_each(|r| r[1] = Some(1.0));
        match clean_and_standardize(&raw, &ColumnSpec::stand_in()) {
            Err(Error::ZeroVariance(c)) => assert_eq!(c, "c2"),
            other => panic!("expected zero variance, got {other:?}"),
        }
        let spec = ColumnSpec { treatment: "years".into(), ..ColumnSpec::stand_in() };
        assert!(matches!(clean_and_standardize(&raw, &spec), Err(Error::MissingColumn(_))));
        let empty = RawTable { headers: raw.headers.clone(), rows: Vec::new() };
        assert!(clean_and_standardize(&empty, &ColumnSpec::stand_in()).is_err());
    }

    #[test]
    fn split_arithmetic() {
        let f = [0.72, 0.08, 0.20];
        assert_eq!(split_sizes(2990, &f).unwrap(), vec![2153, 239, 598]);
        assert_eq!(split_sizes(3000, &f).unwrap(), vec![2160, 240, 600]);
        assert_eq!(split_sizes(10, &f).unwrap(), vec![7, 1, 2]);
        assert!(split_sizes(2, &f).is_err());
        assert!(split_sizes(100, &[0.5, 0.6]).is_err());
        let parts = split(2990, &f, 4).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..2990).collect::<Vec<_>>());
    }

    #[test]
    fn treatment_noise_levels() {
        let x: Vec<f64> = crate::rng::standard_normals(&mut stream(5, 0), 3000);
        let levels = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let out = inject_treatment_noise(&x, &levels, 6).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].1, x);
        let sd = sample_sd(&x);
        for (rho, xn) in &out[1..] {
            let e: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            assert!((sample_sd(&e) / (rho * sd) - 1.0).abs() < 0.05);
        }
        // Adding a level leaves the others untouched.
        let fewer = inject_treatment_noise(&x, &[0.4], 6).unwrap();
        assert_eq!(fewer[0].1, out[2].1);
        assert!(inject_treatment_noise(&x, &[-0.1], 6).is_err());
    }

    #[test]
    fn outcome_noise_is_a_tenth_of_the_residual_scale() {
        let raw = stand_in_table(3000, 0, 7);
        let c = clean_and_standardize(&raw, &ColumnSpec::stand_in()).unwrap();
        let fit = make_synthetic_outcome(&c.z, 5, &c.x_star, &c.y, 0.1, &quick_outcome_cfg(), 8).unwrap();
        assert_eq!(fit.delta_y_sd, 0.1 * fit.residual_sd);
        let mu = fit.net.forward_batch(&concat_z_t(&c.z, 5, &c.x_star), 3000).unwrap();
        let e: Vec<f64> = fit.y_synth.iter().zip(&mu).map(|(a, b)| a - b).collect();
        assert!((sample_sd(&e) / fit.delta_y_sd - 1.0).abs() < 0.05);
        let exact = make_synthetic_outcome(&c.z, 5, &c.x_star, &c.y, 0.0, &quick_outcome_cfg(), 8).unwrap();
        assert_eq!(exact.y_synth, mu);
    }

    #[test]
    fn truth_checkpoint_scores_zero() {
        let raw = stand_in_table(400, 5, 9);
        let cfg = SemisynthConfig { outcome_net: quick_outcome_cfg(), ..SemisynthConfig::default() };
        let b = build_benchmark(&raw, &ColumnSpec::stand_in(), &cfg, 10).unwrap();
        assert_eq!(b.levels.len(), 6);
        assert_eq!(b.splits.iter().map(Vec::len).collect::<Vec<_>>(), vec![288, 32, 80]);
        let lvl = &b.levels[3];
        assert_eq!(lvl.rho, 0.6);
        let model = FittedModel {
            variant: Variant::Oracle,
            body: ModelBody::Regressor(Regressor {
                z_dim: 5,
                treatment: Treatment::True,
                mu_y: lvl.truth.net.clone(),
                sigma_hat: lvl.truth.delta_y_sd,
            }),
        };
        let ecfg = EvalConfig { n_x_star: 40, n_y: 200, ..EvalConfig::default() };
        assert_eq!(rmse_mu_y(&model, &lvl.truth, &lvl.test, &ecfg).unwrap(), 0.0);
        let (rep, _) = evaluate(&model, &lvl.truth, &lvl.test, &ecfg, 1).unwrap();
        assert_eq!(rep.aid, 0.0);
        assert!(rep.quadrature.z_nodes.is_none());
    }
}
