//! Confusion matrices and per-class precision / recall / F1 reports.
//!
//! Every ratio whose denominator is zero is defined as 0. Values are kept
//! at full precision and only rounded (half-up, two decimals) when rendered.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelRegistry;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Square count matrix: rows are true classes, columns predicted classes,
/// both in registry order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: LabelRegistry,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: LabelRegistry, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Eval(format!("confusion matrix must be {k}×{k}")));
        }
        Ok(Self { labels, counts })
    }

    pub fn labels(&self) -> &LabelRegistry {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// True count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Predicted count of class `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// Counts `(true, predicted)` id pairs.
pub fn confusion(y_true: &[usize], y_pred: &[usize], labels: &LabelRegistry) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Eval(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Eval("no samples to evaluate".into()));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::Eval(format!(
                "label id {} is not in the {k}-class registry",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.clone(),
        counts,
    })
}

/// [`confusion`] over label names.
pub fn confusion_by_name<S: AsRef<str>>(
    y_true: &[S],
    y_pred: &[S],
    labels: &LabelRegistry,
) -> Result<ConfusionMatrix> {
    let ids = |names: &[S]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                labels
                    .by_name(n.as_ref())
                    .map(|l| l.id())
                    .ok_or_else(|| Error::Eval(format!("unknown label {:?}", n.as_ref())))
            })
            .collect()
    };
    confusion(&ids(y_true)?, &ids(y_pred)?, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassRow>,
    pub micro_avg: MetricRow,
    pub macro_avg: MetricRow,
    pub weighted_avg: MetricRow,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Eval("confusion matrix is empty".into()));
    }
    let classes: Vec<ClassRow> = cm
        .labels
        .iter()
        .map(|label| {
            let c = label.id();
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            ClassRow {
                label: label.name().to_owned(),
                metrics: MetricRow {
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support: cm.support(c),
                },
            }
        })
        .collect();

    // Pooled over classes every error is one FP and one FN, so all three
    // micro scores reduce to trace / total.
    let tp = cm.trace();
    let errors = total - tp;
    let micro_avg = MetricRow {
        precision: ratio(tp, tp + errors),
        recall: ratio(tp, tp + errors),
        f1: ratio(2 * tp, 2 * tp + 2 * errors),
        support: total,
    };

    let k = classes.len() as f64;
    let mean = |f: fn(&MetricRow) -> f64| classes.iter().map(|c| f(&c.metrics)).sum::<f64>() / k;
    let weighted = |f: fn(&MetricRow) -> f64| {
        classes.iter().map(|c| c.metrics.support as f64 * f(&c.metrics)).sum::<f64>() / total as f64
    };
    let macro_avg = MetricRow {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        support: total,
    };
    let weighted_avg = MetricRow {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        support: total,
    };
    Ok(ClassReport {
        classes,
        micro_avg,
        macro_avg,
        weighted_avg,
    })
}

/// Half-up rounding to two decimals. The small epsilon keeps values such as
/// 0.545, whose binary form sits just below the tie, rounding up.
pub fn round2(v: f64) -> f64 {
    (v * 100.0 + 0.5 + 1e-9).floor() / 100.0
}

pub const MICRO_ROW: &str = "Micro avg";
pub const MACRO_ROW: &str = "Macro avg";
pub const WEIGHTED_ROW: &str = "Weighted avg";

/// Fixed-width table with class rows in registry order followed by the
/// three average rows.
pub fn render_text(rep: &ClassReport) -> String {
    let names = rep
        .classes
        .iter()
        .map(|c| c.label.as_str())
        .chain([MICRO_ROW, MACRO_ROW, WEIGHTED_ROW]);
    let width = names.clone().map(str::len).max().unwrap_or(0);
    let mut out = String::new();
    writeln!(out, "{:>width$}  {:>9}  {:>9}  {:>9}  {:>9}", "", "Precision", "Recall", "F1 score", "Support").unwrap();
    writeln!(out).unwrap();
    let row = |out: &mut String, name: &str, m: &MetricRow| {
        writeln!(
            out,
            "{name:>width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
            round2(m.precision),
            round2(m.recall),
            round2(m.f1),
            m.support
        )
        .unwrap();
    };
    for c in &rep.classes {
        row(&mut out, &c.label, &c.metrics);
    }
    writeln!(out).unwrap();
    row(&mut out, MICRO_ROW, &rep.micro_avg);
    row(&mut out, MACRO_ROW, &rep.macro_avg);
    row(&mut out, WEIGHTED_ROW, &rep.weighted_avg);
    out
}

/// Reads the rows back out of [`render_text`] output as
/// `(name, [precision, recall, f1], support)`.
pub fn parse_rendered(text: &str) -> Result<Vec<(String, [f64; 3], u64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_owned(),
        };
        if fields.len() < 5 {
            return Err(bad("expected a name and four numbers"));
        }
        let n = fields.len();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad metric"));
        rows.push((
            fields[..n - 4].join(" "),
            [num(fields[n - 4])?, num(fields[n - 3])?, num(fields[n - 2])?],
            fields[n - 1].parse().map_err(|_| bad("bad support"))?,
        ));
    }
    Ok(rows)
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub labels: LabelRegistry,
    pub confusion: Vec<Vec<u64>>,
    #[serde(flatten)]
    pub report: ClassReport,
}

impl ReportDocument {
    pub fn new(cm: &ConfusionMatrix, report: ClassReport) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            labels: cm.labels.clone(),
            confusion: cm.counts.clone(),
            report,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
