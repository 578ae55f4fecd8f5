//! Multi-label evaluation: per-class average precision, mAP, and the
//! per-class / overall precision, recall and F1 aggregates.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// How probabilities become hard predictions for the P/R/F1 family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionRule {
    /// Positive when `probability >= threshold`.
    Threshold(f64),
    /// The `k` highest-scoring labels of each sample are positive.
    TopK(usize),
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::Threshold(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub map: f64,
    /// `None` for classes without positives; those are excluded from mAP.
    pub per_class_ap: Vec<Option<f64>>,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
}

/// Metric column names in report order.
pub const METRIC_NAMES: [&str; 7] = ["mAP", "CP", "CR", "CF1", "OP", "OR", "OF1"];

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl MetricsReport {
    /// The seven headline values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.map, self.cp, self.cr, self.cf1, self.op, self.or, self.of1,
        ]
    }

    /// JSON with every number printed to six decimals.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (name, v) in METRIC_NAMES.iter().zip(self.values()) {
            let _ = write!(out, "\"{name}\": {v:.6}, ");
        }
        out.push_str("\"per_class_AP\": [");
        let aps: Vec<String> = self
            .per_class_ap
            .iter()
            .map(|ap| ap.map_or_else(|| "null".to_string(), |v| format!("{v:.6}")))
            .collect();
        out.push_str(&aps.join(", "));
        out.push_str("]}\n");
        out
    }
}

/// Non-interpolated average precision: mean precision at the rank of each
/// positive, ranking by descending score with ties broken by index.
/// Returns `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "average_precision",
            (scores.len(), 1),
            (labels.len(), 1),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

fn predictions(scores: &Matrix, rule: DecisionRule) -> Result<Vec<Vec<bool>>> {
    let n = scores.cols();
    match rule {
        DecisionRule::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Invalid(format!(
                    "threshold must lie in (0, 1), got {t}"
                )));
            }
            Ok((0..scores.rows())
                .map(|s| scores.row(s).iter().map(|&p| p >= t).collect())
                .collect())
        }
        DecisionRule::TopK(k) => {
            if k == 0 {
                return Err(Error::Invalid("top-k needs k >= 1".into()));
            }
            Ok((0..scores.rows())
                .map(|s| {
                    let row = scores.row(s);
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
                    let mut pred = vec![false; n];
                    order.iter().take(k).for_each(|&i| pred[i] = true);
                    pred
                })
                .collect())
        }
    }
}

/// Evaluates probability scores (`samples x n`) against binary labels.
#[allow(clippy::needless_range_loop)]
pub fn evaluate(scores: &Matrix, labels: &Matrix, rule: DecisionRule) -> Result<MetricsReport> {
    if scores.shape() != labels.shape() {
        return Err(Error::shape("evaluate", scores.shape(), labels.shape()));
    }
    if labels.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("label matrix must be binary".into()));
    }
    let (m, n) = scores.shape();
    let preds = predictions(scores, rule)?;

    let mut per_class_ap = Vec::with_capacity(n);
    let (mut cp_sum, mut cr_sum) = (0.0, 0.0);
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for c in 0..n {
        let col_scores: Vec<f64> = (0..m).map(|s| scores.get(s, c)).collect();
        let col_labels: Vec<u8> = (0..m).map(|s| labels.get(s, c) as u8).collect();
        per_class_ap.push(average_precision(&col_scores, &col_labels)?);

        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for s in 0..m {
            match (preds[s][c], col_labels[s] == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                (false, false) => {}
            }
        }
        cp_sum += ratio(tp, tp + fp);
        cr_sum += ratio(tp, tp + fneg);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = ratio(defined.iter().sum(), defined.len() as f64);
    let cp = ratio(cp_sum, n as f64);
    let cr = ratio(cr_sum, n as f64);
    let op = ratio(tp_all, tp_all + fp_all);
    let or = ratio(tp_all, tp_all + fn_all);
    Ok(MetricsReport {
        map,
        per_class_ap,
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or,
        of1: f1(op, or),
    })
}
