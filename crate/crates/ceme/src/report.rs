//! Box-plot statistics of the aggregate table, one row per
//! (noise level, n_train, variant, metric).

use std::collections::BTreeMap;

use anyhow::Result;
use ceme_core::scm::Variant;

use crate::io::{fmt_f64, write_csv};
use crate::layout::RunDir;
use crate::runner::{read_aggregate, AggregateRow};

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub noise_level: f64,
    pub n_train: usize,
    pub variant: Variant,
    pub metric: &'static str,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub const SUMMARY_HEADER: [&str; 8] = ["noise_level", "n_train", "variant", "metric", "count", "q1", "median", "q3"];

pub fn summarize(rows: &[AggregateRow]) -> Vec<SummaryRow> {
    type Get = fn(&AggregateRow) -> Option<f64>;
    let metrics: [(&'static str, Get); 4] = [
        ("rmse", |r| Some(r.rmse)),
        ("aid", |r| Some(r.aid)),
        ("rel_err_sigma", |r| Some(r.rel_err_sigma)),
        ("rel_err_tau", |r| r.rel_err_tau),
    ];
    // Noise levels are ordered by their bit patterns, which is numeric order
    // for non-negative values.
    let mut groups: BTreeMap<(u64, usize, Variant), Vec<&AggregateRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.noise_level.to_bits(), r.n_train, r.variant)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((noise, n_train, variant), members) in groups {
        for (metric, get) in metrics {
            let mut xs: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                noise_level: f64::from_bits(noise),
                n_train,
                variant,
                metric,
                count: xs.len(),
                q1: quantile(&xs, 0.25),
                median: quantile(&xs, 0.5),
                q3: quantile(&xs, 0.75),
            });
        }
    }
    out
}

/// Writes `results/summary.csv` and returns a fixed-width text rendering.
pub fn report(dir: &RunDir) -> Result<String> {
    let rows = read_aggregate(dir)?;
    let summary = summarize(&rows);
    let records: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                fmt_f64(s.noise_level),
                s.n_train.to_string(),
                s.variant.as_str().to_string(),
                s.metric.to_string(),
                s.count.to_string(),
                fmt_f64(s.q1),
                fmt_f64(s.median),
                fmt_f64(s.q3),
            ]
        })
        .collect();
    write_csv(&dir.results().join("summary.csv"), &SUMMARY_HEADER, &records)?;
    let mut text = format!(
        "{:>6} {:>7} {:>10} {:>14} {:>5} {:>10} {:>10} {:>10}\n",
        "noise", "n_train", "variant", "metric", "n", "q1", "median", "q3"
    );
    for s in &summary {
        text.push_str(&format!(
            "{:>6} {:>7} {:>10} {:>14} {:>5} {:>10.4} {:>10.4} {:>10.4}\n",
            s.noise_level,
            s.n_train,
            s.variant.as_str(),
            s.metric,
            s.count,
            s.q1,
            s.median,
            s.q3
        ));
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn groups_and_skips_absent_metrics() {
        let r = |v, rmse, tau| AggregateRow {
            dataset_id: "d".into(),
            noise_level: 0.2,
            n_train: 10,
            variant: v,
            rmse,
            rel_err_sigma: 0.0,
            rel_err_tau: tau,
            aid: 0.0,
            seed: 0,
        };
        let rows = [r(Variant::Naive, 1.0, None), r(Variant::Naive, 3.0, None), r(Variant::Ceme, 2.0, Some(0.1))];
        let s = summarize(&rows);
        assert_eq!(s.len(), 4 + 3);
        let naive_rmse = s.iter().find(|x| x.variant == Variant::Naive && x.metric == "rmse").unwrap();
        assert_eq!((naive_rmse.count, naive_rmse.median), (2, 2.0));
        assert!(!s.iter().any(|x| x.variant == Variant::Naive && x.metric == "rel_err_tau"));
    }
}
