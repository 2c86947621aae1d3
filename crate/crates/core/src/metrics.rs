//! Episode statistics: SR, SPL, DtG, NRE and per-scenario report rows.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no episodes to aggregate")]
    EmptySet,
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
}

/// Outcome fields of one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub scenario: String,
    pub seed: u64,
    pub success: bool,
    pub dtg: f64,
    pub path_length: f64,
    pub optimal_path_length: f64,
    pub prompts: usize,
    pub goal_observed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub d_max: f64,
    pub gamma: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { d_max: 3.0, gamma: 0.5 }
    }
}

/// Normalized residual error over (success, residual distance) pairs.
pub fn nre(episodes: &[(bool, f64)], d_max: f64, gamma: f64) -> Result<f64, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    if !(d_max > 0.0 && gamma > 0.0) {
        return Err(MetricsError::InvalidParameter(format!("d_max={d_max}, gamma={gamma}")));
    }
    let total: f64 = episodes
        .iter()
        .map(|(s, d)| {
            if *s {
                (d / d_max).clamp(0.0, 1.0).powf(gamma)
            } else {
                1.0
            }
        })
        .sum();
    Ok(total / episodes.len() as f64)
}

/// Success weighted by optimal / actual path length over (success, path, optimal).
pub fn spl(episodes: &[(bool, f64, f64)]) -> Result<f64, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut total = 0.0;
    for (s, p, l) in episodes {
        if !(*l > 0.0) {
            return Err(MetricsError::InvalidParameter(format!(
                "optimal path length {l} must be positive"
            )));
        }
        if *s {
            total += l / p.max(*l);
        }
    }
    Ok(total / episodes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub avg: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

impl Stat {
    /// Population statistics.
    pub fn of(values: &[f64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptySet);
        }
        let n = values.len() as f64;
        let avg = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / n;
        Ok(Self {
            avg,
            std: var.sqrt(),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub episodes: usize,
    pub prompts: Stat,
    pub path_length: Stat,
    pub dtg: Stat,
    pub obs_rate: f64,
    pub sr: f64,
    pub spl: f64,
    pub nre: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<ReportRow>,
}

/// One row from episodes of a single scenario.
pub fn summarize(logs: &[EpisodeOutcome], params: &MetricParams) -> Result<ReportRow, MetricsError> {
    let first = logs.first().ok_or(MetricsError::EmptySet)?;
    if let Some(other) = logs.iter().find(|l| l.scenario != first.scenario) {
        return Err(MetricsError::InvalidParameter(format!(
            "mixed scenarios `{}` and `{}`",
            first.scenario, other.scenario
        )));
    }
    let col = |f: fn(&EpisodeOutcome) -> f64| logs.iter().map(f).collect::<Vec<_>>();
    let n = logs.len() as f64;
    Ok(ReportRow {
        scenario: first.scenario.clone(),
        episodes: logs.len(),
        prompts: Stat::of(&col(|l| l.prompts as f64))?,
        path_length: Stat::of(&col(|l| l.path_length))?,
        dtg: Stat::of(&col(|l| l.dtg))?,
        obs_rate: logs.iter().filter(|l| l.goal_observed).count() as f64 / n,
        sr: logs.iter().filter(|l| l.success).count() as f64 / n,
        spl: spl(&logs
            .iter()
            .map(|l| (l.success, l.path_length, l.optimal_path_length))
            .collect::<Vec<_>>())?,
        nre: nre(
            &logs.iter().map(|l| (l.success, l.dtg)).collect::<Vec<_>>(),
            params.d_max,
            params.gamma,
        )?,
    })
}

/// Rows grouped by scenario name, in name order.
pub fn aggregate(logs: &[EpisodeOutcome], params: &MetricParams) -> Result<AggregateReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut groups: BTreeMap<&str, Vec<EpisodeOutcome>> = BTreeMap::new();
    for l in logs {
        groups.entry(&l.scenario).or_default().push(l.clone());
    }
    let rows = groups
        .values()
        .map(|g| summarize(g, params))
        .collect::<Result<_, _>>()?;
    Ok(AggregateReport { rows })
}

impl AggregateReport {
    pub fn to_table(&self) -> String {
        let header = [
            "scenario",
            "n",
            "prompts avg/std/max/min",
            "path m avg/std/max/min",
            "dtg m avg/std/max/min",
            "obs",
            "sr",
            "spl",
            "nre",
        ];
        let fmt = |s: &Stat| format!("{:.2}/{:.2}/{:.2}/{:.2}", s.avg, s.std, s.max, s.min);
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.scenario.clone(),
                    r.episodes.to_string(),
                    fmt(&r.prompts),
                    fmt(&r.path_length),
                    fmt(&r.dtg),
                    format!("{:.2}", r.obs_rate),
                    format!("{:.2}", r.sr),
                    format!("{:.3}", r.spl),
                    format!("{:.3}", r.nre),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        line(
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .iter()
                .map(String::as_str)
                .collect(),
            &mut out,
        );
        for row in &body {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ep(scenario: &str, success: bool, dtg: f64, path: f64) -> EpisodeOutcome {
        EpisodeOutcome {
            scenario: scenario.into(),
            seed: 0,
            success,
            dtg,
            path_length: path,
            optimal_path_length: 8.0,
            prompts: 3,
            goal_observed: success,
        }
    }

    #[test]
    fn nre_examples() {
        assert_eq!(nre(&[(true, 0.0), (true, 0.0)], 3.0, 0.5).unwrap(), 0.0);
        assert_eq!(nre(&[(false, 0.0), (false, 7.0)], 3.0, 0.5).unwrap(), 1.0);
        assert_eq!(nre(&[(true, 1.0)], 4.0, 0.5).unwrap(), 0.5);
        assert_eq!(nre(&[(true, 9.0)], 3.0, 0.5).unwrap(), 1.0, "ratio clamped");
        assert_eq!(nre(&[], 3.0, 0.5), Err(MetricsError::EmptySet));
    }

    #[test]
    fn nre_hand_fixture() {
        // (1 + sqrt(1/3) + sqrt(2/3) + 0) / 4 computed by hand: 0.59846...
        let v = nre(&[(false, 5.0), (true, 1.0), (true, 2.0), (true, 0.0)], 3.0, 0.5).unwrap();
        let hand = (1.0 + (1.0f64 / 3.0).sqrt() + (2.0f64 / 3.0).sqrt()) / 4.0;
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.598_462).abs() < 1e-6);
    }

    #[test]
    fn spl_examples() {
        assert_eq!(spl(&[(true, 8.0, 8.0)]).unwrap(), 1.0);
        assert_eq!(spl(&[(false, 8.0, 8.0)]).unwrap(), 0.0);
        assert_eq!(spl(&[(true, 10.0, 8.0)]).unwrap(), 0.8);
        assert_eq!(spl(&[]), Err(MetricsError::EmptySet));
        assert!(spl(&[(true, 1.0, 0.0)]).is_err());
    }

    #[test]
    fn summarize_examples() {
        let r = summarize(&[ep("a", true, 2.0, 9.0)], &MetricParams::default()).unwrap();
        assert_eq!(
            r.dtg,
            Stat {
                avg: 2.0,
                std: 0.0,
                max: 2.0,
                min: 2.0
            }
        );
        let r = summarize(
            &[ep("a", true, 2.0, 9.0), ep("a", false, 4.0, 12.0)],
            &MetricParams::default(),
        )
        .unwrap();
        assert_eq!((r.dtg.avg, r.dtg.std), (3.0, 1.0));
        assert_eq!(r.sr, 0.5);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ReportRow>(&json).unwrap(), r);
        assert!(summarize(
            &[ep("a", true, 2.0, 9.0), ep("b", true, 2.0, 9.0)],
            &MetricParams::default()
        )
        .is_err());
        assert_eq!(summarize(&[], &MetricParams::default()), Err(MetricsError::EmptySet));
    }

    #[test]
    fn aggregate_groups_by_scenario() {
        let rep = aggregate(
            &[
                ep("b", true, 1.0, 8.0),
                ep("a", true, 1.0, 8.0),
                ep("b", false, 5.0, 8.0),
            ],
            &MetricParams::default(),
        )
        .unwrap();
        assert_eq!(
            rep.rows
                .iter()
                .map(|r| (r.scenario.as_str(), r.episodes))
                .collect::<Vec<_>>(),
            vec![("a", 1), ("b", 2)]
        );
        let t = rep.to_table();
        assert_eq!(t.lines().count(), 4);
        assert!(t.starts_with("scenario"));
    }

    fn arb_eps() -> impl Strategy<Value = Vec<EpisodeOutcome>> {
        proptest::collection::vec((proptest::bool::ANY, 0.0..10.0f64, 0.1..50.0f64, 0.1..50.0f64), 1..20).prop_map(
            |v| {
                v.into_iter()
                    .map(|(s, d, p, l)| EpisodeOutcome {
                        optimal_path_length: l,
                        ..ep("x", s, d, p)
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn spl_never_exceeds_sr(eps in arb_eps()) {
            let r = summarize(&eps, &MetricParams::default()).unwrap();
            prop_assert!(r.spl <= r.sr + 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.nre));
            prop_assert!(r.dtg.min <= r.dtg.avg + 1e-12 && r.dtg.avg <= r.dtg.max + 1e-12 && r.dtg.std >= 0.0);
        }

        #[test]
        fn summarize_is_permutation_invariant(eps in arb_eps(), rot in 0usize..20) {
            let mut shuffled = eps.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = summarize(&eps, &MetricParams::default()).unwrap();
            let b = summarize(&shuffled, &MetricParams::default()).unwrap();
            prop_assert_eq!(a.sr, b.sr);
            prop_assert!((a.spl - b.spl).abs() < 1e-12 && (a.nre - b.nre).abs() < 1e-12);
            prop_assert!((a.dtg.avg - b.dtg.avg).abs() < 1e-12 && (a.dtg.std - b.dtg.std).abs() < 1e-12);
            prop_assert_eq!((a.dtg.min, a.dtg.max), (b.dtg.min, b.dtg.max));
        }

        #[test]
        fn nre_is_one_minus_sr_with_zero_residuals(s in proptest::collection::vec(proptest::bool::ANY, 1..30)) {
            let eps: Vec<(bool, f64)> = s.iter().map(|b| (*b, 0.0)).collect();
            let sr = s.iter().filter(|b| **b).count() as f64 / s.len() as f64;
            prop_assert!((nre(&eps, 3.0, 0.5).unwrap() - (1.0 - sr)).abs() < 1e-12);
        }
    }
}
