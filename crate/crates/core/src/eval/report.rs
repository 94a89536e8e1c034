//! Aggregation of repeated runs into mean ± std tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate::{RunEvaluation, COLD_START_BUCKETS};
use super::metrics::ImpressionMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 || values.iter().all(|&v| v == values[0]) {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }

    /// `mean±std` scaled by `factor`, two decimals.
    pub fn format(&self, factor: f64) -> String {
        format!("{:.2}±{:.2}", self.mean * factor, self.std * factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: MeanStd,
    pub mrr: MeanStd,
    pub ndcg5: MeanStd,
    pub ndcg10: MeanStd,
}

impl MetricSummary {
    pub fn of(runs: &[ImpressionMetrics]) -> Self {
        let col =
            |f: fn(&ImpressionMetrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            auc: col(|m| m.auc),
            mrr: col(|m| m.mrr),
            ndcg5: col(|m| m.ndcg5),
            ndcg10: col(|m| m.ndcg10),
        }
    }

    pub fn columns(&self) -> [MeanStd; 4] {
        [self.auc, self.mrr, self.ndcg5, self.ndcg10]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub history_len: usize,
    /// Mean bucket size over runs.
    pub impressions: f64,
    /// `None` if the bucket was empty in every run.
    pub metrics: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub runs: usize,
    pub metrics: MetricSummary,
    pub evaluated: usize,
    pub excluded: usize,
    pub cold_start: Vec<BucketSummary>,
    pub ilad: Vec<MeanStd>,
    pub new_topic_ratio: Vec<MeanStd>,
}

impl MethodReport {
    pub fn from_runs(method: impl Into<String>, runs: &[RunEvaluation]) -> Self {
        let metrics = MetricSummary::of(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
        let cold_start = if runs.iter().all(|r| !r.cold_start.is_empty()) && !runs.is_empty() {
            COLD_START_BUCKETS
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let present: Vec<ImpressionMetrics> = runs
                        .iter()
                        .filter_map(|r| r.cold_start[i].metrics)
                        .collect();
                    BucketSummary {
                        history_len: k,
                        impressions: runs
                            .iter()
                            .map(|r| r.cold_start[i].impressions as f64)
                            .sum::<f64>()
                            / runs.len() as f64,
                        metrics: (!present.is_empty()).then(|| MetricSummary::of(&present)),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let per_depth = |get: fn(&RunEvaluation) -> &Vec<f64>| -> Vec<MeanStd> {
            if runs.is_empty() || runs.iter().any(|r| get(r).is_empty()) {
                return Vec::new();
            }
            (0..get(&runs[0]).len())
                .map(|k| MeanStd::of(&runs.iter().map(|r| get(r)[k]).collect::<Vec<_>>()))
                .collect()
        };
        MethodReport {
            method: method.into(),
            runs: runs.len(),
            metrics,
            evaluated: runs.first().map_or(0, |r| r.evaluated),
            excluded: runs.first().map_or(0, |r| r.excluded),
            cold_start,
            ilad: per_depth(|r| &r.ilad),
            new_topic_ratio: per_depth(|r| &r.new_topic_ratio),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    /// One row per method; ranking metrics in percent.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\truns");
        for name in ImpressionMetrics::NAMES {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for m in &self.methods {
            let _ = write!(out, "{}\t{}", m.method, m.runs);
            for c in m.metrics.columns() {
                let _ = write!(out, "\t{}", c.format(100.0));
            }
            out.push('\n');
        }
        out
    }

    /// One row per (method, bucket); empty buckets print `absent`.
    pub fn cold_start_tsv(&self) -> String {
        let mut out = String::from("method\thistory\timpressions");
        for name in ImpressionMetrics::NAMES {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for m in &self.methods {
            for b in &m.cold_start {
                let _ = write!(out, "{}\t{}\t{:.1}", m.method, b.history_len, b.impressions);
                match &b.metrics {
                    Some(s) => {
                        for c in s.columns() {
                            let _ = write!(out, "\t{}", c.format(100.0));
                        }
                    }
                    None => out.push_str(&"\tabsent".repeat(4)),
                }
                out.push('\n');
            }
        }
        out
    }

    /// One row per (method, depth) with ILAD@K and new-topic ratio@K.
    pub fn diversity_tsv(&self) -> String {
        let mut out = String::from("method\tk\tILAD\tnewTopicRatio\n");
        for m in &self.methods {
            for (k, (i, t)) in m.ilad.iter().zip(&m.new_topic_ratio).enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.4}±{:.4}\t{:.4}±{:.4}",
                    m.method,
                    k + 1,
                    i.mean,
                    i.std,
                    t.mean,
                    t.std
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[0.7]).std, 0.0);
        assert_eq!(MeanStd::of(&[0.1, 0.1, 0.1]).std, 0.0);
        assert_eq!(
            MeanStd {
                mean: 0.7105,
                std: 0.0
            }
            .format(100.0),
            "71.05±0.00"
        );
    }

    #[test]
    fn report_tables_have_expected_shape() {
        let run = RunEvaluation {
            metrics: ImpressionMetrics {
                auc: 0.6,
                mrr: 0.3,
                ndcg5: 0.35,
                ndcg10: 0.4,
            },
            evaluated: 10,
            excluded: 1,
            cold_start: COLD_START_BUCKETS
                .iter()
                .map(|&k| super::super::evaluate::BucketResult {
                    history_len: k,
                    impressions: if k == 5 { 0 } else { 2 },
                    metrics: (k != 5).then_some(ImpressionMetrics {
                        auc: 0.5,
                        mrr: 0.5,
                        ndcg5: 0.5,
                        ndcg10: 0.5,
                    }),
                })
                .collect(),
            ilad: vec![0.0, 0.5],
            new_topic_ratio: vec![0.1, 0.2],
            ilad_excluded_pairs: 0,
        };
        let report = EvalReport {
            methods: vec![MethodReport::from_runs("CTR", &[run.clone(), run])],
        };
        let tsv = report.to_tsv();
        assert_eq!(
            tsv.lines().nth(1).unwrap(),
            "CTR\t2\t60.00±0.00\t30.00±0.00\t35.00±0.00\t40.00±0.00"
        );
        let cold = report.cold_start_tsv();
        assert_eq!(cold.lines().count(), 5);
        assert!(cold
            .lines()
            .last()
            .unwrap()
            .ends_with("absent\tabsent\tabsent\tabsent"));
        assert_eq!(report.diversity_tsv().lines().count(), 3);
    }
}
