//! Per-trial safety metrics and cross-condition statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::io::format_number;
use crate::sim::{Completion, Hand, Mode, TrialLog};

/// Default sclera force safety limit, mN.
pub const SAFE_LIMIT_MN: f64 = 120.0;

/// p-values below this are printed as `<1e-15`.
pub const P_FLOOR: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trial log is empty")]
    EmptyLog,
    #[error("each sample needs at least two values (got {0} and {1})")]
    TooFewSamples(usize, usize),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("condition `{0}` has no trials")]
    EmptyGroup(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandMetrics {
    /// mN
    pub mean_sclera: f64,
    /// mN
    pub max_sclera: f64,
    /// Percentage of trial time with the sclera force above the limit.
    pub pct_time_over_limit: f64,
    /// Handle wrench force magnitude (N), cooperative mode only.
    pub mean_wrench: Option<f64>,
    pub max_wrench: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub mode: Mode,
    pub posture: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub completion: Completion,
    /// s; present only when the task was completed.
    pub completion_time: Option<f64>,
    /// s
    pub duration: f64,
    pub ticks: usize,
    /// mN
    pub limit_mn: f64,
    pub pin_order: Vec<u8>,
    /// Right robot.
    pub dominant: HandMetrics,
    /// Left robot.
    pub non_dominant: HandMetrics,
}

impl TrialMetrics {
    pub fn hand(&self, hand: Hand) -> &HandMetrics {
        match hand {
            Hand::Right => &self.dominant,
            Hand::Left => &self.non_dominant,
        }
    }
}

/// Time-weighted metrics: each record holds until the next one, and the last
/// record holds for one control period.
pub fn trial_metrics(log: &TrialLog, limit_mn: f64) -> Result<TrialMetrics, MetricsError> {
    let n = log.records.len();
    if n == 0 {
        return Err(MetricsError::EmptyLog);
    }
    let weights: Vec<f64> = (0..n)
        .map(|i| if i + 1 < n { log.records[i + 1].t - log.records[i].t } else { log.meta.dt })
        .collect();
    let total: f64 = weights.iter().sum();

    let hand_metrics = |k: usize| {
        let mut mean = 0.0;
        let mut max = 0.0f64;
        let mut over = 0.0;
        let (mut wmean, mut wmax) = (0.0, 0.0f64);
        for (rec, &w) in log.records.iter().zip(&weights) {
            let r = &rec.robots[k];
            let f = r.reading.norm;
            mean += w * f;
            max = max.max(f);
            if f > limit_mn {
                over += w;
            }
            let wrench = r.input.fixed_rows::<3>(0).norm();
            wmean += w * wrench;
            wmax = wmax.max(wrench);
        }
        let cooperative = log.meta.mode == Mode::Cooperative;
        HandMetrics {
            mean_sclera: mean / total,
            max_sclera: max,
            pct_time_over_limit: 100.0 * over / total,
            mean_wrench: cooperative.then_some(wmean / total),
            max_wrench: cooperative.then_some(wmax),
        }
    };

    let completion_time = log
        .records
        .iter()
        .rev()
        .find(|r| r.events.contains(&crate::sim::TaskEvent::Complete))
        .map(|r| r.t);
    Ok(TrialMetrics {
        mode: log.meta.mode,
        posture: log.meta.posture.clone(),
        scenario_hash: log.meta.scenario_hash.clone(),
        seed: log.meta.seed,
        completion: log.meta.completion,
        completion_time,
        duration: total,
        ticks: n,
        limit_mn,
        pin_order: log.meta.pin_order.clone(),
        dominant: hand_metrics(0),
        non_dominant: hand_metrics(1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub p: f64,
    pub dof: f64,
}

impl WelchResult {
    pub fn significant(&self) -> bool {
        self.p < 0.05
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
///
/// Zero variance in both samples: equal means give t = 0, p = 1; different
/// means give t = ±inf, p = 0. The reported dof is then n_a + n_b − 2.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::TooFewSamples(a.len(), b.len()));
    }
    if !a.iter().chain(b).all(|x| x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let dof = na + nb - 2.0;
        return Ok(if diff == 0.0 {
            WelchResult { t: 0.0, p: 1.0, dof }
        } else {
            WelchResult { t: f64::INFINITY.copysign(diff), p: 0.0, dof }
        });
    }
    let t = diff / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(WelchResult { t, p, dof })
}

/// Format a p-value for reports.
pub fn format_p(p: f64) -> String {
    if p < P_FLOOR {
        "<1e-15".into()
    } else {
        format_number(p)
    }
}

/// Metric names used in reports, in report order.
pub const METRIC_NAMES: [&str; 11] = [
    "r_mean_sclera",
    "r_max_sclera",
    "r_pct_over_limit",
    "l_mean_sclera",
    "l_max_sclera",
    "l_pct_over_limit",
    "completion_time",
    "r_mean_wrench",
    "r_max_wrench",
    "l_mean_wrench",
    "l_max_wrench",
];

/// Report values of one trial; `None` where the metric does not apply.
pub fn metric_values(m: &TrialMetrics) -> [Option<f64>; 11] {
    let (r, l) = (&m.dominant, &m.non_dominant);
    [
        Some(r.mean_sclera),
        Some(r.max_sclera),
        Some(r.pct_time_over_limit),
        Some(l.mean_sclera),
        Some(l.max_sclera),
        Some(l.pct_time_over_limit),
        m.completion_time,
        r.mean_wrench,
        r.max_wrench,
        l.mean_wrench,
        l.max_wrench,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub condition: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Set when the group has a single value, so its std is reported as 0.
    pub single_trial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRow {
    pub metric: &'static str,
    pub condition_a: String,
    pub condition_b: String,
    pub welch: WelchResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConditionReport {
    pub summary: Vec<SummaryRow>,
    pub pairwise: Vec<PairRow>,
}

/// Per-condition mean ± sample std of every metric and pairwise Welch tests.
/// Metrics with no values in a group are omitted; pairs where either group
/// has fewer than two values are skipped.
pub fn summarize_conditions(groups: &[(String, Vec<TrialMetrics>)]) -> Result<ConditionReport, MetricsError> {
    let mut report = ConditionReport::default();
    for (name, trials) in groups {
        if trials.is_empty() {
            return Err(MetricsError::EmptyGroup(name.clone()));
        }
    }
    let column = |trials: &[TrialMetrics], k: usize| -> Vec<f64> { trials.iter().filter_map(|m| metric_values(m)[k]).collect() };
    for (k, metric) in METRIC_NAMES.iter().enumerate() {
        for (name, trials) in groups {
            let xs = column(trials, k);
            if xs.is_empty() {
                continue;
            }
            let (mean, std) = if xs.len() == 1 { (xs[0], 0.0) } else { let (m, v) = mean_var(&xs); (m, v.sqrt()) };
            report.summary.push(SummaryRow {
                metric,
                condition: name.clone(),
                n: xs.len(),
                mean,
                std,
                single_trial: xs.len() == 1,
            });
        }
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let (a, b) = (column(&groups[i].1, k), column(&groups[j].1, k));
                if a.len() < 2 || b.len() < 2 {
                    continue;
                }
                report.pairwise.push(PairRow {
                    metric,
                    condition_a: groups[i].0.clone(),
                    condition_b: groups[j].0.clone(),
                    welch: welch_ttest(&a, &b)?,
                });
            }
        }
    }
    Ok(report)
}

impl ConditionReport {
    /// Long-format CSV. `row` is `summary` or `welch`; columns that do not
    /// apply to a row kind are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,metric,condition,other,n,mean,std,t,dof,p,flag\n");
        for s in &self.summary {
            out.push_str(&format!(
                "summary,{},{},,{},{},{},,,,{}\n",
                s.metric,
                s.condition,
                s.n,
                format_number(s.mean),
                format_number(s.std),
                if s.single_trial { "single-trial" } else { "" }
            ));
        }
        for p in &self.pairwise {
            out.push_str(&format!(
                "welch,{},{},{},,,,{},{},{},{}\n",
                p.metric,
                p.condition_a,
                p.condition_b,
                format_number(p.welch.t),
                format_number(p.welch.dof),
                format_p(p.welch.p),
                if p.welch.significant() { "significant" } else { "" }
            ));
        }
        out
    }

    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut rows = vec![vec!["metric".to_string(), "condition".into(), "n".into(), "mean ± std".into(), "".into()]];
        for s in &self.summary {
            rows.push(vec![
                s.metric.to_string(),
                s.condition.clone(),
                s.n.to_string(),
                format!("{} ± {}", fixed3(s.mean), fixed3(s.std)),
                if s.single_trial { "warning: single trial".into() } else { String::new() },
            ]);
        }
        let mut out = align(&rows);
        if !self.pairwise.is_empty() {
            out.push('\n');
            let mut rows = vec![vec!["metric".to_string(), "conditions".into(), "t".into(), "dof".into(), "p".into(), "".into()]];
            for p in &self.pairwise {
                rows.push(vec![
                    p.metric.to_string(),
                    format!("{} vs {}", p.condition_a, p.condition_b),
                    fixed3(p.welch.t),
                    fixed3(p.welch.dof),
                    format_p(p.welch.p),
                    if p.welch.significant() { "*".into() } else { String::new() },
                ]);
            }
            out.push_str(&align(&rows));
        }
        out
    }
}

fn fixed3(v: f64) -> String {
    format!("{v:.3}")
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
