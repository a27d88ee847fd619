use std::fmt::Write;

use super::{aggregate, relative_improvement, MetricsReport, RunMetrics, Summary};
use crate::error::{Error, Result};

/// Aggregated metrics of one method (or single-view baseline).
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub single_view: bool,
    pub report: MetricsReport,
    pub failed_runs: usize,
}

impl ReportRow {
    pub fn new(
        label: impl Into<String>,
        single_view: bool,
        runs: &[RunMetrics],
        failed_runs: usize,
    ) -> Result<Self> {
        Ok(Self {
            label: label.into(),
            single_view,
            report: aggregate(runs)?,
            failed_runs,
        })
    }
}

/// Per-method comparison with top-3 ranks and relative improvements.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ReportRow>,
}

const METRICS: [(&str, &str); 4] = [
    ("aa", "AA"),
    ("auc", "AUC"),
    ("f1", "F1"),
    ("entropy", "Entropy"),
];

fn column(r: &MetricsReport, metric: &str) -> Summary {
    match metric {
        "aa" => r.aa,
        "auc" => r.auc,
        "f1" => r.f1,
        _ => r.entropy,
    }
}

impl ComparisonTable {
    pub fn new(rows: Vec<ReportRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::UndefinedMetric("no results to report".into()));
        }
        Ok(Self { rows })
    }

    /// 1-based rank of each row's mean when it is among the best three:
    /// highest for AA, AUC and F1, lowest for entropy. Ties share a rank.
    pub fn top3(&self, metric: &str) -> Vec<Option<usize>> {
        let lower_is_better = metric == "entropy";
        let means: Vec<f64> = self
            .rows
            .iter()
            .map(|r| column(&r.report, metric).mean)
            .collect();
        means
            .iter()
            .map(|&m| {
                let better = means
                    .iter()
                    .filter(|&&o| if lower_is_better { o < m } else { o > m })
                    .count();
                (better < 3).then_some(better + 1)
            })
            .collect()
    }

    /// Relative AA and AUC improvements of the best fusion row over the best
    /// and the worst single-view rows. Empty unless both kinds are present.
    pub fn improvement_lines(&self) -> Result<Vec<String>> {
        let fusion: Vec<&ReportRow> = self.rows.iter().filter(|r| !r.single_view).collect();
        let single: Vec<&ReportRow> = self.rows.iter().filter(|r| r.single_view).collect();
        if fusion.is_empty() || single.is_empty() {
            return Ok(Vec::new());
        }
        let mut lines = Vec::new();
        for (metric, name) in [("aa", "AA"), ("auc", "AUC")] {
            let mean = |r: &&ReportRow| column(&r.report, metric).mean;
            let by_mean = |a: &&&ReportRow, b: &&&ReportRow| mean(a).total_cmp(&mean(b));
            let best_fusion = fusion.iter().max_by(by_mean).expect("non-empty");
            let best_single = single.iter().max_by(by_mean).expect("non-empty");
            let worst_single = single.iter().min_by(by_mean).expect("non-empty");
            for (which, base) in [("best", best_single), ("worst", worst_single)] {
                let gain = relative_improvement(mean(best_fusion), mean(base))?;
                lines.push(format!(
                    "{name}: best fusion {} ({:.2}) vs {which} single view {} ({:.2}): {gain:+.1}%",
                    best_fusion.label,
                    mean(best_fusion),
                    base.label,
                    mean(base)
                ));
            }
        }
        Ok(lines)
    }

    /// Markdown table (mean ± std, 2 decimals), top-3 entries marked with
    /// their rank, followed by the improvement lines.
    pub fn to_markdown(&self) -> Result<String> {
        let ranks: Vec<Vec<Option<usize>>> = METRICS.iter().map(|(m, _)| self.top3(m)).collect();
        let mut out = String::new();
        out.push_str("| method | runs |");
        for (_, title) in METRICS {
            write!(out, " {title} |").unwrap();
        }
        out.push_str("\n|---|---:|");
        out.push_str(&"---:|".repeat(METRICS.len()));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let runs = if row.failed_runs > 0 {
                format!("{} ({} failed)", row.report.runs, row.failed_runs)
            } else {
                row.report.runs.to_string()
            };
            write!(out, "| {} | {runs} |", row.label).unwrap();
            for (k, (metric, _)) in METRICS.iter().enumerate() {
                let s = column(&row.report, metric);
                let mark = ranks[k][i].map_or(String::new(), |r| format!(" ({r})"));
                write!(out, " {:.2} ± {:.2}{mark} |", s.mean, s.std).unwrap();
            }
            out.push('\n');
        }
        out.push_str("\n(n) marks the n-th best value of a column; lower is better for entropy.\n");
        let lines = self.improvement_lines()?;
        if !lines.is_empty() {
            out.push_str("\nRelative improvement:\n\n");
            for l in lines {
                writeln!(out, "- {l}").unwrap();
            }
        }
        Ok(out)
    }

    /// One CSV row per method with mean, std and top-3 rank per metric.
    pub fn to_csv(&self) -> String {
        let ranks: Vec<Vec<Option<usize>>> = METRICS.iter().map(|(m, _)| self.top3(m)).collect();
        let mut out = String::from("method,runs,failed_runs");
        for (m, _) in METRICS {
            write!(out, ",{m}_mean,{m}_std,{m}_rank").unwrap();
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{},{},{}", row.label, row.report.runs, row.failed_runs).unwrap();
            for (k, (metric, _)) in METRICS.iter().enumerate() {
                let s = column(&row.report, metric);
                let rank = ranks[k][i].map_or(String::new(), |r| r.to_string());
                write!(out, ",{:.2},{:.2},{rank}", s.mean, s.std).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
