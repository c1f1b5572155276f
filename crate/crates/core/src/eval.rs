//! Confusion matrix, per-sector precision/recall, and the QA assertion gate
//! that blocks or approves a model release.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::company::Timestamp;
use crate::persistence::{AppendLog, StoreError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold/prediction length mismatch: {golds} vs {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("gold label {0:?} not in the sector list")]
    UnknownGold(String),
    #[error("bad assertion line {line}: {detail}")]
    BadAssertion { line: usize, detail: String },
}

/// Rows are gold sectors, columns are predicted sectors plus one trailing
/// column for predictions outside the sector list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub sectors: Vec<String>,
    /// (sectors.len()) x (sectors.len() + 1), row-major.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    fn cols(&self) -> usize {
        self.sectors.len() + 1
    }

    pub fn at(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.cols() + pred]
    }

    pub fn novel_count(&self, gold: usize) -> u64 {
        self.at(gold, self.sectors.len())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.sectors.len()).map(|i| self.at(i, i)).sum()
    }
}

/// Tally gold/predicted sector names. Predictions not in `sector_list` land
/// in the novel column.
pub fn confusion(
    golds: &[String],
    preds: &[String],
    sector_list: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let index: BTreeMap<&str, usize> = sector_list
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let cols = sector_list.len() + 1;
    let mut counts = vec![0u64; sector_list.len() * cols];
    for (gold, pred) in golds.iter().zip(preds) {
        let g = *index
            .get(gold.as_str())
            .ok_or_else(|| EvalError::UnknownGold(gold.clone()))?;
        let p = index.get(pred.as_str()).copied().unwrap_or(sector_list.len());
        counts[g * cols + p] += 1;
    }
    Ok(ConfusionMatrix {
        sectors: sector_list.to_vec(),
        counts,
    })
}

/// Precision/recall for one sector; `None` marks an undefined value (zero
/// denominator), which is reported rather than coerced to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorMetric {
    pub sector: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorMetrics {
    pub per_sector: Vec<SectorMetric>,
    pub accuracy: Option<f64>,
    pub total: u64,
}

impl SectorMetrics {
    pub fn sector(&self, name: &str) -> Option<&SectorMetric> {
        self.per_sector.iter().find(|m| m.sector == name)
    }

    /// Macro average over sectors where the metric is defined.
    pub fn macro_precision(&self) -> Option<f64> {
        macro_mean(self.per_sector.iter().map(|m| m.precision))
    }

    pub fn macro_recall(&self) -> Option<f64> {
        macro_mean(self.per_sector.iter().map(|m| m.recall))
    }
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Per-sector precision (diagonal over column) and recall (diagonal over
/// row), plus overall accuracy (trace over total).
pub fn metrics(matrix: &ConfusionMatrix) -> SectorMetrics {
    let n = matrix.sectors.len();
    let mut per_sector = Vec::with_capacity(n);
    for s in 0..n {
        let diag = matrix.at(s, s);
        let row_total: u64 = (0..n + 1).map(|c| matrix.at(s, c)).sum();
        let col_total: u64 = (0..n).map(|r| matrix.at(r, s)).sum();
        per_sector.push(SectorMetric {
            sector: matrix.sectors[s].clone(),
            precision: (col_total > 0).then(|| diag as f64 / col_total as f64),
            recall: (row_total > 0).then(|| diag as f64 / row_total as f64),
            support: row_total,
        });
    }
    let total = matrix.total();
    SectorMetrics {
        per_sector,
        accuracy: (total > 0).then(|| matrix.trace() as f64 / total as f64),
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Precision,
    Recall,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::Accuracy => "accuracy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "precision" => Some(MetricKind::Precision),
            "recall" => Some(MetricKind::Recall),
            "accuracy" => Some(MetricKind::Accuracy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Greater => ">",
            Comparator::GreaterEq => ">=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            ">" => Some(Comparator::Greater),
            ">=" => Some(Comparator::GreaterEq),
            _ => None,
        }
    }

    pub fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Comparator::Greater => observed > threshold,
            Comparator::GreaterEq => observed >= threshold,
        }
    }
}

/// One release assertion, e.g. precision of a named sector above a bound.
/// Sector "overall" targets accuracy or the macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAssertion {
    pub sector: String,
    pub metric: MetricKind,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl QaAssertion {
    pub fn describe(&self) -> String {
        format!(
            "{} {} {} {}",
            self.sector,
            self.metric.as_str(),
            self.comparator.as_str(),
            self.threshold
        )
    }
}

/// Parse the assertions file: one `sector TAB metric TAB comparator TAB
/// threshold` per line; blank lines and `#` comments skipped.
pub fn parse_assertions(content: &str) -> Result<Vec<QaAssertion>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |detail: &str| EvalError::BadAssertion {
            line: idx + 1,
            detail: detail.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad(&format!("expected 4 fields, got {}", fields.len())));
        }
        let metric = MetricKind::parse(fields[1]).ok_or_else(|| bad("unknown metric"))?;
        let comparator = Comparator::parse(fields[2]).ok_or_else(|| bad("unknown comparator"))?;
        let threshold: f64 = fields[3].parse().map_err(|_| bad("bad threshold"))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(bad("threshold out of [0,1]"));
        }
        out.push(QaAssertion {
            sector: fields[0].to_string(),
            metric,
            comparator,
            threshold,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaViolation {
    pub assertion: String,
    /// Observed value, absent when the metric was undefined or the sector
    /// unknown (fail-closed).
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QaVerdict {
    Pass,
    Fail(Vec<QaViolation>),
}

impl QaVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, QaVerdict::Pass)
    }
}

fn observe(metrics: &SectorMetrics, assertion: &QaAssertion) -> Option<f64> {
    if assertion.sector == "overall" {
        return match assertion.metric {
            MetricKind::Accuracy => metrics.accuracy,
            MetricKind::Precision => metrics.macro_precision(),
            MetricKind::Recall => metrics.macro_recall(),
        };
    }
    let sector = metrics.sector(&assertion.sector)?;
    match assertion.metric {
        MetricKind::Precision => sector.precision,
        MetricKind::Recall => sector.recall,
        MetricKind::Accuracy => metrics.accuracy,
    }
}

/// Evaluate every assertion; pass only if all hold. Undefined metrics and
/// unknown sectors count as violations.
pub fn evaluate_assertions(metrics: &SectorMetrics, assertions: &[QaAssertion]) -> QaVerdict {
    let mut violations = Vec::new();
    for assertion in assertions {
        match observe(metrics, assertion) {
            Some(observed) if assertion.comparator.holds(observed, assertion.threshold) => {}
            observed => violations.push(QaViolation {
                assertion: assertion.describe(),
                observed,
            }),
        }
    }
    if violations.is_empty() {
        QaVerdict::Pass
    } else {
        QaVerdict::Fail(violations)
    }
}

/// The release gate: on failure exactly one alert record is appended to the
/// alert log (timestamp, model version, violations).
pub fn qa_gate(
    metrics: &SectorMetrics,
    assertions: &[QaAssertion],
    alert_log: &mut AppendLog,
    model_version: &str,
    now: Timestamp,
) -> Result<QaVerdict, StoreError> {
    let verdict = evaluate_assertions(metrics, assertions);
    if let QaVerdict::Fail(violations) = &verdict {
        let detail = violations
            .iter()
            .map(|v| match v.observed {
                Some(obs) => format!("{} (observed {:.4})", v.assertion, obs),
                None => format!("{} (observed undefined)", v.assertion),
            })
            .collect::<Vec<_>>()
            .join("; ");
        alert_log.append(&[&now.to_string(), model_version, &detail])?;
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let golds = names(&["a", "b", "a"]);
        let matrix = confusion(&golds, &golds, &names(&["a", "b"])).unwrap();
        assert_eq!(matrix.trace(), 3);
        assert_eq!(matrix.total(), 3);
        let m = metrics(&matrix);
        assert_eq!(m.accuracy, Some(1.0));
        for sector in &m.per_sector {
            assert_eq!(sector.precision, Some(1.0));
            assert_eq!(sector.recall, Some(1.0));
        }
    }

    #[test]
    fn hand_counted_three_sample_case() {
        let golds = names(&["a", "a", "b"]);
        let preds = names(&["a", "b", "b"]);
        let matrix = confusion(&golds, &preds, &names(&["a", "b"])).unwrap();
        assert_eq!(matrix.at(0, 0), 1);
        assert_eq!(matrix.at(0, 1), 1);
        assert_eq!(matrix.at(1, 1), 1);
        let m = metrics(&matrix);
        let a = m.sector("a").unwrap();
        let b = m.sector("b").unwrap();
        assert_eq!(a.precision, Some(1.0));
        assert_eq!(a.recall, Some(0.5));
        assert_eq!(b.precision, Some(0.5));
        assert_eq!(b.recall, Some(1.0));
        assert!((m.accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn novel_prediction_lands_in_trailing_column() {
        let golds = names(&["a"]);
        let preds = names(&["blockchain"]);
        let matrix = confusion(&golds, &preds, &names(&["a", "b"])).unwrap();
        assert_eq!(matrix.novel_count(0), 1);
        let m = metrics(&matrix);
        assert_eq!(m.accuracy, Some(0.0));
        // Recall suffers, precision of "a" is undefined (empty column).
        assert_eq!(m.sector("a").unwrap().recall, Some(0.0));
        assert_eq!(m.sector("a").unwrap().precision, None);
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = confusion(&names(&["a"]), &names(&[]), &names(&["a"])).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { .. }));
    }

    #[test]
    fn unknown_gold_rejected() {
        let err = confusion(&names(&["zz"]), &names(&["a"]), &names(&["a"])).unwrap_err();
        assert_eq!(err, EvalError::UnknownGold("zz".to_string()));
    }

    #[test]
    fn undefined_precision_reported_not_zeroed() {
        // Sector c never predicted: empty column.
        let golds = names(&["a", "c"]);
        let preds = names(&["a", "a"]);
        let matrix = confusion(&golds, &preds, &names(&["a", "c"])).unwrap();
        let m = metrics(&matrix);
        assert_eq!(m.sector("c").unwrap().precision, None);
        assert_eq!(m.sector("c").unwrap().recall, Some(0.0));
    }

    #[test]
    fn accuracy_equals_trace_over_total_on_random_matrices() {
        let mut rng = crate::rng::Rng::new(31);
        for _ in 0..200 {
            let n = 1 + rng.below(6);
            let sectors: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let cols = n + 1;
            let counts: Vec<u64> = (0..n * cols).map(|_| rng.below(20) as u64).collect();
            let matrix = ConfusionMatrix {
                sectors,
                counts,
            };
            let m = metrics(&matrix);
            let total: u64 = matrix.counts.iter().sum();
            if total == 0 {
                assert_eq!(m.accuracy, None);
            } else {
                let trace: u64 = (0..n).map(|i| matrix.counts[i * cols + i]).sum();
                assert_eq!(m.accuracy, Some(trace as f64 / total as f64));
            }
        }
    }

    #[test]
    fn order_permutation_leaves_metrics_unchanged() {
        let golds = names(&["a", "b", "a", "b", "a"]);
        let preds = names(&["a", "a", "b", "b", "a"]);
        let list = names(&["a", "b"]);
        let base = confusion(&golds, &preds, &list).unwrap();
        let perm = [4usize, 2, 0, 1, 3];
        let g2: Vec<String> = perm.iter().map(|&i| golds[i].clone()).collect();
        let p2: Vec<String> = perm.iter().map(|&i| preds[i].clone()).collect();
        let shuffled = confusion(&g2, &p2, &list).unwrap();
        assert_eq!(base, shuffled);
        assert_eq!(metrics(&base), metrics(&shuffled));
    }

    fn vertical_software_metrics(precision: f64) -> SectorMetrics {
        SectorMetrics {
            per_sector: vec![SectorMetric {
                sector: "vertical software".to_string(),
                precision: Some(precision),
                recall: Some(0.9),
                support: 50,
            }],
            accuracy: Some(0.9),
            total: 50,
        }
    }

    fn assertion() -> QaAssertion {
        QaAssertion {
            sector: "vertical software".to_string(),
            metric: MetricKind::Precision,
            comparator: Comparator::Greater,
            threshold: 0.75,
        }
    }

    #[test]
    fn gate_passes_above_threshold() {
        let dir = tempdir().unwrap();
        let mut log = AppendLog::open(dir.path().join("alerts.log")).unwrap();
        let verdict = qa_gate(
            &vertical_software_metrics(0.80),
            &[assertion()],
            &mut log,
            "m1",
            Timestamp(10),
        )
        .unwrap();
        assert!(verdict.passed());
        assert!(log.replay().unwrap().records.is_empty());
    }

    #[test]
    fn gate_blocks_and_alerts_once_below_threshold() {
        let dir = tempdir().unwrap();
        let mut log = AppendLog::open(dir.path().join("alerts.log")).unwrap();
        let verdict = qa_gate(
            &vertical_software_metrics(0.70),
            &[assertion()],
            &mut log,
            "m1",
            Timestamp(10),
        )
        .unwrap();
        let QaVerdict::Fail(violations) = verdict else {
            panic!("expected failure");
        };
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].observed, Some(0.70));
        let records = log.replay().unwrap().records;
        assert_eq!(records.len(), 1);
        assert_eq!(records[0][1], "m1");
    }

    #[test]
    fn empty_assertion_list_passes_vacuously() {
        let verdict = evaluate_assertions(&vertical_software_metrics(0.1), &[]);
        assert!(verdict.passed());
    }

    #[test]
    fn unknown_sector_fails_closed() {
        let mut a = assertion();
        a.sector = "nonexistent".to_string();
        let verdict = evaluate_assertions(&vertical_software_metrics(0.99), &[a]);
        let QaVerdict::Fail(violations) = verdict else {
            panic!("expected failure");
        };
        assert_eq!(violations[0].observed, None);
    }

    #[test]
    fn undefined_metric_fails_closed() {
        let mut m = vertical_software_metrics(0.9);
        m.per_sector[0].precision = None;
        let verdict = evaluate_assertions(&m, &[assertion()]);
        assert!(!verdict.passed());
    }

    #[test]
    fn assertions_file_round_trip() {
        let text = "vertical software\tprecision\t>\t0.75\noverall\taccuracy\t>=\t0.8\n";
        let parsed = parse_assertions(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], assertion());
        assert_eq!(parsed[1].sector, "overall");
        assert!(parse_assertions("x\tprecision\t>\t1.5\n").is_err());
        assert!(parse_assertions("x\tbogus\t>\t0.5\n").is_err());
    }

    #[test]
    fn overall_assertions_use_accuracy_and_macro_means() {
        let m = SectorMetrics {
            per_sector: vec![
                SectorMetric {
                    sector: "a".to_string(),
                    precision: Some(1.0),
                    recall: Some(0.5),
                    support: 2,
                },
                SectorMetric {
                    sector: "b".to_string(),
                    precision: Some(0.5),
                    recall: Some(1.0),
                    support: 1,
                },
            ],
            accuracy: Some(2.0 / 3.0),
            total: 3,
        };
        assert_eq!(m.macro_precision(), Some(0.75));
        assert_eq!(m.macro_recall(), Some(0.75));
        let pass = QaAssertion {
            sector: "overall".to_string(),
            metric: MetricKind::Precision,
            comparator: Comparator::GreaterEq,
            threshold: 0.75,
        };
        assert!(evaluate_assertions(&m, &[pass]).passed());
    }
}
