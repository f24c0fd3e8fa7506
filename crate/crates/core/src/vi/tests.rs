use super::*;
use crate::gpdata::{generate_dataset, GeneratorConfig};
use crate::rng::standard_normals;
use proptest::prelude::*;

fn quick(variant: Variant, max_epochs: usize) -> TrainConfig {
    TrainConfig { max_epochs, restarts: 2, seed: 5, ..TrainConfig::synthetic(variant, 1000) }
}

fn linear_data(n: usize, seed: u64) -> Dataset {
    let r = standard_normals(&mut stream(seed, 0), 2 * n);
    let (z, xs) = (r[..n].to_vec(), r[n..].to_vec());
    let y = xs.iter().map(|v| 2.0 * v + 1.0).collect();
    Dataset::new(1, z, Some(xs.clone()), xs, y).unwrap()
}

fn record(score: f64, failed: bool) -> RunRecord {
    RunRecord {
        seed: 0,
        initial_val_score: score,
        history: Vec::new(),
        best_val_score: score,
        best_epoch: None,
        stop_reason: StopReason::MaxEpochs,
        failed,
        failure: None,
        wall_time_secs: None,
        checkpoint: None,
    }
}

#[test]
fn anneal_schedule_examples() {
    let cfg = TrainConfig::synthetic(Variant::Ceme, 1000);
    assert_eq!(anneal_weight(0, &cfg), 4.0);
    assert_eq!(anneal_weight(5, &cfg), 2.5);
    assert_eq!(anneal_weight(10, &cfg), 1.0);
    assert_eq!(anneal_weight(500, &cfg), 1.0);
}

proptest! {
    #[test]
    fn anneal_is_non_increasing(w0 in 1.0f64..20.0, span in 1usize..50, e in 0usize..100) {
        let cfg = TrainConfig { initial_term_weight: w0, anneal_epochs: span, ..TrainConfig::education_wage() };
        prop_assert!(anneal_weight(e + 1, &cfg) <= anneal_weight(e, &cfg));
        prop_assert!(anneal_weight(e, &cfg) >= 1.0);
        prop_assert_eq!(anneal_weight(span + e, &cfg), 1.0);
    }
}

#[test]
fn table_presets() {
    let c = TrainConfig::synthetic(Variant::Ceme, 16_000);
    assert_eq!((c.batch_size, c.learning_rate), (256, 0.01));
    let c = TrainConfig::synthetic(Variant::CemePlus, 4000);
    assert_eq!((c.batch_size, c.learning_rate), (64, 0.003));
    let c = TrainConfig::synthetic(Variant::Naive, 16_000);
    assert_eq!((c.batch_size, c.learning_rate), (64, 0.001));
    let e = TrainConfig::education_wage();
    assert_eq!((e.hidden[0], e.batch_size, e.initial_term_weight, e.anneal_epochs), (26, 32, 8.0, 5));
    assert_eq!(TrainConfig::outcome_network().hidden, vec![30; 5]);
    for c in [c, e] {
        c.validate().unwrap();
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = TrainConfig::education_wage();
    for bad in [
        TrainConfig { batch_size: 0, ..base.clone() },
        TrainConfig { lr_factor: 1.0, ..base.clone() },
        TrainConfig { initial_term_weight: 0.5, ..base.clone() },
        TrainConfig { restarts: 0, ..base.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(TrainConfig { max_epochs: 0, ..base }.validate().is_ok());
}

#[test]
fn zero_epoch_budget_keeps_initial_model() {
    let d = linear_data(50, 1);
    let cfg = quick(Variant::Ceme, 0);
    let mut m = CemeModel::for_data(&d, &cfg.hidden, None, &mut stream(1, 1)).unwrap();
    let before = m.clone();
    let rec = train_ceme(&mut m, &d, &d, &cfg, 3, &mut |_| {}).unwrap();
    assert_eq!(m, before);
    assert!(rec.history.is_empty());
    assert_eq!(rec.best_val_score, rec.initial_val_score);
}

#[test]
fn ceme_training_improves_and_replays() {
    let ds = generate_dataset(1000, 0.2, &GeneratorConfig::default(), 11).unwrap();
    let val = generate_dataset(300, 0.2, &GeneratorConfig::default(), 12).unwrap();
    let cfg = quick(Variant::Ceme, 12);
    let run = || {
        let mut m = CemeModel::for_data(&ds.data, &cfg.hidden, None, &mut stream(2, 0)).unwrap();
        let mut seen = Vec::new();
        let rec = train_ceme(&mut m, &ds.data, &val.data, &cfg, 9, &mut |e| seen.push(e.epoch)).unwrap();
        (m, rec, seen)
    };
    let (m, rec, seen) = run();
    assert!(!rec.failed);
    assert_eq!(seen.len(), rec.history.len());
    assert!(rec.best_val_score < rec.initial_val_score);
    let restored = ceme_validation_score(&m, &val.data, cfg.n_importance_samples, 9).unwrap();
    assert_eq!(restored, rec.best_val_score);
    let scores = rec.val_scores();
    assert_eq!(rec.best_val_score, scores.iter().cloned().fold(f64::INFINITY, f64::min));
    let (m2, rec2, _) = run();
    assert_eq!(rec.train_losses(), rec2.train_losses());
    assert_eq!(m, m2);
}

#[test]
fn known_tau_is_never_trained() {
    let ds = generate_dataset(300, 0.2, &GeneratorConfig::default(), 13).unwrap();
    let cfg = quick(Variant::CemePlus, 3);
    let tau = ds.truth.tau;
    let mut m = CemeModel::for_data(&ds.data, &cfg.hidden, Some(tau), &mut stream(3, 0)).unwrap();
    let raw = m.tau_raw;
    train_ceme(&mut m, &ds.data, &ds.data, &cfg, 4, &mut |_| {}).unwrap();
    assert_eq!(m.tau().to_bits(), tau.to_bits());
    assert_eq!(m.tau_raw.to_bits(), raw.to_bits());
}

#[test]
fn oracle_learns_a_noiseless_line() {
    let train = linear_data(2000, 20);
    let val = linear_data(500, 21);
    let cfg = TrainConfig { max_epochs: 400, ..quick(Variant::Oracle, 0) };
    let (fitted, rec) = fit_variant(Variant::Oracle, &train, &val, None, &cfg, 7, &mut |_| {}).unwrap();
    assert!(rec.best_val_score < 1e-3, "val mse {}", rec.best_val_score);
    let ModelBody::Regressor(r) = &fitted.body else { panic!("regressor expected") };
    assert_eq!(r.treatment, Treatment::True);
    let xs = train.x_star().unwrap();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for i in 0..=20 {
        let t = lo + (hi - lo) * i as f64 / 20.0;
        let p = r.predict(&[0.0], t).unwrap();
        assert!((p - (2.0 * t + 1.0)).abs() < 0.05, "at {t}: {p}");
    }
    // Learning rate only ever drops, by exactly the factor.
    for w in rec.history.windows(2) {
        let (a, b) = (w[0].learning_rate, w[1].learning_rate);
        assert!(b == a || b == a * cfg.lr_factor);
    }
    assert!((r.sigma_hat - libm::sqrt(regressor_mse(r, &train).unwrap())).abs() < 1e-15);
}

#[test]
fn regressor_fits_a_constant() {
    let mut d = linear_data(400, 22);
    d.y.iter_mut().for_each(|v| *v = 0.7);
    let cfg = TrainConfig { max_epochs: 150, ..quick(Variant::Naive, 0) };
    let (fitted, rec) = fit_variant(Variant::Naive, &d, &d, None, &cfg, 8, &mut |_| {}).unwrap();
    assert!(rec.best_val_score < 1e-4);
    let ModelBody::Regressor(r) = &fitted.body else { panic!("regressor expected") };
    assert_eq!(r.treatment, Treatment::Observed);
    assert!((r.predict(&[0.3], -0.4).unwrap() - 0.7).abs() < 0.02);
}

#[test]
fn selection_is_argmin_over_successes() {
    let recs = [record(3.0, false), record(1.0, false), record(2.0, false)];
    assert_eq!(select_best(&recs).unwrap(), 1);
    let recs = [record(3.0, false), record(1.0, true), record(2.0, false)];
    assert_eq!(select_best(&recs).unwrap(), 2);
    assert_eq!(select_best(&[record(0.5, false)]).unwrap(), 0);
    assert!(matches!(
        select_best(&[record(1.0, true), record(2.0, true)]),
        Err(Error::AllRestartsFailed(2))
    ));
}

#[test]
fn restarts_keep_the_best_score() {
    let train = linear_data(300, 23);
    let val = linear_data(100, 24);
    let cfg = TrainConfig { max_epochs: 5, restarts: 3, ..quick(Variant::Naive, 0) };
    let out = best_of_restarts(Variant::Naive, &train, &val, None, &cfg).unwrap();
    assert_eq!(out.records.len(), 3);
    let best = out.records[out.chosen].best_val_score;
    assert!(out.records.iter().all(|r| best <= r.best_val_score));
    assert_eq!(regressor_mse(
        match &out.model.body { ModelBody::Regressor(r) => r, _ => unreachable!() },
        &val,
    ).unwrap(), best);
    let seeds: Vec<u64> = out.records.iter().map(|r| r.seed).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
    assert!(best_of_restarts(Variant::CemePlus, &train, &val, None, &cfg).is_err());
}
