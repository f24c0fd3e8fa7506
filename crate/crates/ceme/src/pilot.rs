//! Desk-scale end-to-end run with qualitative pass/fail checks.

use std::collections::BTreeMap;

use anyhow::Result;
use ceme_core::math::median;
use ceme_core::scm::Variant;
use serde::Serialize;

use crate::config::{ExperimentConfig, PilotThresholds};
use crate::io::write_json;
use crate::layout::RunDir;
use crate::runner::{evaluate, generate, train, AggregateRow, Filters, ResultsTable};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotSummary {
    pub datasets: usize,
    pub success_rows: usize,
    pub failure_rows: usize,
    pub checks: Vec<Check>,
}

impl PilotSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn values(rows: &[AggregateRow], v: Variant, f: impl Fn(&AggregateRow) -> Option<f64>) -> Vec<f64> {
    rows.iter().filter(|r| r.variant == v).filter_map(f).collect()
}

fn med(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| median(xs))
}

fn show(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Evaluates the pilot thresholds on aggregate rows. A variant with no rows
/// fails every check that needs it.
pub fn pilot_checks(rows: &[AggregateRow], th: &PilotThresholds) -> Vec<Check> {
    let mut by_dataset: BTreeMap<&str, BTreeMap<Variant, &AggregateRow>> = BTreeMap::new();
    for r in rows {
        by_dataset.entry(&r.dataset_id).or_default().insert(r.variant, r);
    }
    let paired: Vec<_> = by_dataset
        .values()
        .filter_map(|m| Some((m.get(&Variant::Ceme)?, m.get(&Variant::Naive)?)))
        .collect();
    let wins = paired.iter().filter(|(c, n)| c.rmse < n.rmse).count();
    let mut checks = vec![Check {
        name: "ceme_beats_naive_rmse",
        pass: wins >= th.min_rmse_wins,
        detail: format!("CEME rmse below Naive on {wins} of {} datasets (need {})", paired.len(), th.min_rmse_wins),
    }];

    let m = |v, f: fn(&AggregateRow) -> Option<f64>| med(&values(rows, v, f));
    let aid_c = m(Variant::Ceme, |r| Some(r.aid));
    let aid_n = m(Variant::Naive, |r| Some(r.aid));
    checks.push(Check {
        name: "ceme_beats_naive_aid",
        pass: matches!((aid_c, aid_n), (Some(c), Some(n)) if c < n),
        detail: format!("median AID: CEME {} vs Naive {}", show(aid_c), show(aid_n)),
    });

    let rm_o = m(Variant::Oracle, |r| Some(r.rmse));
    let rm_p = m(Variant::CemePlus, |r| Some(r.rmse));
    let rm_c = m(Variant::Ceme, |r| Some(r.rmse));
    checks.push(Check {
        name: "rmse_ordering",
        pass: matches!((rm_o, rm_p, rm_c), (Some(o), Some(p), Some(c)) if o < p && p <= th.ceme_plus_slack * c),
        detail: format!(
            "median rmse: Oracle {} < CEME+ {} <= {} x CEME {}",
            show(rm_o),
            show(rm_p),
            th.ceme_plus_slack,
            show(rm_c)
        ),
    });

    let tau = med(&values(rows, Variant::Ceme, |r| r.rel_err_tau.map(f64::abs)));
    checks.push(Check {
        name: "tau_recovery",
        pass: tau.is_some_and(|t| t < th.max_median_abs_rel_tau),
        detail: format!("CEME median |rel err tau| {} (need < {})", show(tau), th.max_median_abs_rel_tau),
    });

    let sig = m(Variant::Ceme, |r| Some(r.rel_err_sigma));
    checks.push(Check {
        name: "sigma_recovery",
        pass: sig.is_some_and(|s| th.rel_sigma_low < s && s < th.rel_sigma_high),
        detail: format!(
            "CEME median rel err sigma {} (need in ({}, {}))",
            show(sig),
            th.rel_sigma_low,
            th.rel_sigma_high
        ),
    });
    checks
}

pub fn summarize(cfg: &ExperimentConfig, t: &ResultsTable) -> PilotSummary {
    let mut ids: Vec<&str> = t.rows.iter().map(|r| r.dataset_id.as_str()).collect();
    ids.extend(t.failures.iter().map(|f| f.dataset_id.as_str()));
    ids.sort_unstable();
    ids.dedup();
    PilotSummary {
        datasets: ids.len(),
        success_rows: t.rows.len(),
        failure_rows: t.failures.len(),
        checks: pilot_checks(&t.rows, &cfg.pilot),
    }
}

/// generate → train → evaluate → checks; writes `pilot_summary.json`.
pub fn run_pilot(cfg: &ExperimentConfig, dir: &RunDir) -> Result<PilotSummary> {
    let all = Filters::default();
    generate(cfg, dir, &all)?;
    train(cfg, dir, &all)?;
    let table = evaluate(cfg, dir, &all)?;
    let summary = summarize(cfg, &table);
    write_json(&dir.root.join("pilot_summary.json"), &summary)?;
    Ok(summary)
}
