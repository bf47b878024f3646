//! Calibration and accuracy metrics over logits tables.
//!
//! Confidence is the largest softmax probability of a row; the predicted
//! class is the argmax of the raw logits with ties going to the lowest
//! class index. All sums run in sample order so results do not depend on
//! scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::LogitsTable;

/// Bin count used when callers do not choose one.
pub const DEFAULT_BIN_COUNT: usize = 15;

/// Probabilities are floored here before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Softmax of one row, computed with max subtraction.
pub fn softmax(row: &[f64]) -> Result<Vec<f64>> {
    if row.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("softmax input {v} is not finite")));
    }
    Ok(softmax_unchecked(row))
}

pub(crate) fn softmax_unchecked(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Predicted class and its softmax probability.
pub fn predict(row: &[f64]) -> (usize, f64) {
    let class = argmax(row);
    let max = row[class];
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    (class, 1.0 / sum)
}

/// Softmax probability of class `class` for one row.
pub fn class_probability(row: &[f64], class: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    (row[class] - max).exp() / sum
}

/// Per-sample `-ln p(label)` with the probability floored at
/// [`PROBABILITY_FLOOR`].
fn sample_nll(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    let nll = sum.ln() - (row[label] - max);
    nll.min(-PROBABILITY_FLOOR.ln())
}

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub sample_count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

/// Equal-width reliability bins over `[0, 1]`.
///
/// Bin `i` (0-based) covers `(i/B, (i+1)/B]`; a confidence of exactly 0
/// falls into the first bin. Empty bins report zero means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<Bin>,
}

/// Bin index for a confidence in `[0, 1]` under the half-open-left rule.
pub fn bin_index(confidence: f64, bin_count: usize) -> usize {
    let b = bin_count as f64;
    let mut idx = ((confidence * b).ceil() as usize)
        .saturating_sub(1)
        .min(bin_count - 1);
    // Correct for rounding in the product so membership matches the edges
    // `i / bin_count` exactly.
    while idx > 0 && confidence <= idx as f64 / b {
        idx -= 1;
    }
    while idx + 1 < bin_count && confidence > (idx + 1) as f64 / b {
        idx += 1;
    }
    idx
}

impl ReliabilityBins {
    /// Bins per-sample confidences and correctness flags.
    pub fn from_predictions(
        confidences: &[f64],
        correct: &[bool],
        bin_count: usize,
    ) -> Result<Self> {
        if bin_count == 0 {
            return Err(Error::contract("bin count must be at least 1"));
        }
        if confidences.len() != correct.len() {
            return Err(Error::contract(format!(
                "{} confidences for {} correctness flags",
                confidences.len(),
                correct.len()
            )));
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::domain(format!("confidence {c} outside [0, 1]")));
        }
        let mut counts = vec![0usize; bin_count];
        let mut conf_sum = vec![0.0; bin_count];
        let mut hits = vec![0usize; bin_count];
        for (&c, &ok) in confidences.iter().zip(correct) {
            let i = bin_index(c, bin_count);
            counts[i] += 1;
            conf_sum[i] += c;
            hits[i] += usize::from(ok);
        }
        let bins = (0..bin_count)
            .map(|i| {
                if counts[i] == 0 {
                    Bin {
                        sample_count: 0,
                        mean_confidence: 0.0,
                        mean_accuracy: 0.0,
                    }
                } else {
                    let n = counts[i] as f64;
                    Bin {
                        sample_count: counts[i],
                        mean_confidence: conf_sum[i] / n,
                        mean_accuracy: hits[i] as f64 / n,
                    }
                }
            })
            .collect();
        Ok(Self { bins })
    }

    pub fn from_table(table: &LogitsTable, bin_count: usize) -> Result<Self> {
        let labels = table.require_labels("reliability binning")?;
        let (confidences, correct): (Vec<f64>, Vec<bool>) = table
            .rows()
            .zip(labels)
            .map(|(row, &y)| {
                let (class, conf) = predict(row);
                (conf, class == y)
            })
            .unzip();
        Self::from_predictions(&confidences, &correct, bin_count)
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.sample_count).sum()
    }

    /// Count-weighted mean gap between accuracy and confidence.
    pub fn ece(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| b.sample_count > 0)
            .map(|b| {
                b.sample_count as f64 / total as f64 * (b.mean_accuracy - b.mean_confidence).abs()
            })
            .sum()
    }

    /// CSV with header `bin,count,mean_confidence,mean_accuracy`; bins are
    /// numbered from 1.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin,count,mean_confidence,mean_accuracy\n");
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:?},{:?}\n",
                i + 1,
                b.sample_count,
                b.mean_confidence,
                b.mean_accuracy
            ));
        }
        out
    }
}

/// Expected calibration error with `bin_count` equal-width bins.
pub fn ece(table: &LogitsTable, bin_count: usize) -> Result<f64> {
    Ok(ReliabilityBins::from_table(table, bin_count)?.ece())
}

/// Brier score divided by the class count: `1/(NK) sum_i sum_k (p_ik - y_ik)^2`.
pub fn brier_normalized(table: &LogitsTable) -> Result<f64> {
    let labels = table.require_labels("Brier score")?;
    let k = table.class_count();
    let mut total = 0.0;
    for (row, &y) in table.rows().zip(labels) {
        let p = softmax_unchecked(row);
        total += p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let target = if j == y { 1.0 } else { 0.0 };
                (pj - target) * (pj - target)
            })
            .sum::<f64>();
    }
    Ok(total / (table.sample_count() * k) as f64)
}

/// Mean negative log-likelihood of the labels.
pub fn nll(table: &LogitsTable) -> Result<f64> {
    let labels = table.require_labels("negative log-likelihood")?;
    let total: f64 = table
        .rows()
        .zip(labels)
        .map(|(row, &y)| sample_nll(row, y))
        .sum();
    Ok(total / table.sample_count() as f64)
}

/// Fraction of samples whose argmax differs from the label.
pub fn error_rate(table: &LogitsTable) -> Result<f64> {
    let labels = table.require_labels("error rate")?;
    let wrong = table
        .rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) != y)
        .count();
    Ok(wrong as f64 / table.sample_count() as f64)
}

/// Summary of calibration quality for one labeled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sample_count: usize,
    pub class_count: usize,
    pub ece: f64,
    pub brier_normalized: f64,
    pub nll: f64,
    pub error_rate: f64,
    pub bins: ReliabilityBins,
}

impl MetricsReport {
    pub fn evaluate(table: &LogitsTable, bin_count: usize) -> Result<Self> {
        let bins = ReliabilityBins::from_table(table, bin_count)?;
        Ok(Self {
            sample_count: table.sample_count(),
            class_count: table.class_count(),
            ece: bins.ece(),
            brier_normalized: brier_normalized(table)?,
            nll: nll(table)?,
            error_rate: error_rate(table)?,
            bins,
        })
    }

    /// `key=value` lines for terminals and scripts.
    pub fn to_text(&self) -> String {
        format!(
            "samples={}\nclasses={}\nece={:?}\nbrier_normalized={:?}\nnll={:?}\nerror_rate={:?}\nbins={}\n",
            self.sample_count,
            self.class_count,
            self.ece,
            self.brier_normalized,
            self.nll,
            self.error_rate,
            self.bins.bin_count()
        )
    }
}

/// How often each group took each rank across a set of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDistribution {
    /// Per-parameter ranks `(g1, g2, g3, g4)`, 1 = lowest ECE.
    pub ranks: Vec<[usize; 4]>,
    /// `fractions[g][r]` = share of parameters where group `g+1` had rank `r+1`.
    pub fractions: [[f64; 4]; 4],
}

/// Competition ranks of four values: 1 for the smallest, tied values share
/// the lower rank.
pub fn rank_four(values: [f64; 4]) -> [usize; 4] {
    let mut ranks = [0; 4];
    for (g, &v) in values.iter().enumerate() {
        ranks[g] = 1 + values.iter().filter(|&&other| other < v).count();
    }
    ranks
}

/// Ranks the four group ECEs of every parameter and tallies the rank
/// distribution of each group. Undefined ECEs may be passed as `+inf`,
/// which ranks them last.
pub fn group_rank_analysis(group_eces: &[[f64; 4]]) -> Result<RankDistribution> {
    if group_eces.is_empty() {
        return Err(Error::contract(
            "rank analysis needs at least one parameter",
        ));
    }
    if group_eces.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::domain("group ECE is NaN"));
    }
    let ranks: Vec<[usize; 4]> = group_eces.iter().map(|&e| rank_four(e)).collect();
    let mut fractions = [[0.0; 4]; 4];
    let share = 1.0 / ranks.len() as f64;
    for r in &ranks {
        for g in 0..4 {
            fractions[g][r[g] - 1] += share;
        }
    }
    Ok(RankDistribution { ranks, fractions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<f64>], labels: Vec<usize>) -> LogitsTable {
        LogitsTable::from_rows(rows, Some(labels)).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2.0, 0.0]).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((p[1] - 0.119_202_922_022_117_6).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert!(matches!(softmax(&[f64::NAN, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(
            softmax(&[f64::INFINITY, 1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bin_membership_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(f64::from_bits(0.1f64.to_bits() + 1), 10), 1);
        assert_eq!(bin_index(0.6, 10), 5);
        assert_eq!(bin_index(0.61, 10), 6);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.3, 1), 0);
        for i in 1..=15 {
            let edge = i as f64 / 15.0;
            assert_eq!(bin_index(edge, 15), i - 1);
        }
    }

    #[test]
    fn ece_hand_example() {
        let bins = ReliabilityBins::from_predictions(
            &[0.9, 0.9, 0.6, 0.6],
            &[true, false, true, false],
            10,
        )
        .unwrap();
        assert!((bins.ece() - 0.25).abs() < 1e-12);
        let single = ReliabilityBins::from_predictions(&[0.7], &[true], 10).unwrap();
        assert!((single.ece() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ece_perfect_predictions() {
        let t = table(&[vec![800.0, 0.0], vec![0.0, 800.0]], vec![0, 1]);
        assert_eq!(ece(&t, 15).unwrap(), 0.0);
    }

    #[test]
    fn metrics_need_labels() {
        let t = LogitsTable::new(vec![1.0, 0.0], 2, None).unwrap();
        assert!(matches!(ece(&t, 15), Err(Error::Contract(_))));
        assert!(matches!(brier_normalized(&t), Err(Error::Contract(_))));
        assert!(matches!(nll(&t), Err(Error::Contract(_))));
        assert!(matches!(error_rate(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn brier_examples() {
        let t = table(&[vec![0.0, 0.0]], vec![0]);
        assert!((brier_normalized(&t).unwrap() - 0.25).abs() < 1e-15);
        let t = table(&[vec![900.0, 0.0, 0.0]], vec![0]);
        assert_eq!(brier_normalized(&t).unwrap(), 0.0);
    }

    #[test]
    fn nll_examples() {
        let t = table(&[vec![0.0, 0.0]], vec![0]);
        assert!((nll(&t).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let t = table(&[vec![100.0, 0.0]], vec![0]);
        assert!(nll(&t).unwrap() < 1e-40);
        // floor keeps a hopeless prediction finite
        let t = table(&[vec![0.0, 5000.0]], vec![0]);
        assert!((nll(&t).unwrap() - (-PROBABILITY_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn error_rate_examples() {
        let t = table(
            &[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            vec![0, 1, 0, 0],
        );
        assert_eq!(error_rate(&t).unwrap(), 0.25);
        let tie = table(&[vec![1.0, 1.0]], vec![1]);
        assert_eq!(error_rate(&tie).unwrap(), 1.0);
    }

    #[test]
    fn ranks_from_grouping_table() {
        assert_eq!(
            rank_four([0.047142, 0.040512, 0.025389, 0.020825]),
            [4, 3, 2, 1]
        );
        assert_eq!(rank_four([0.1; 4]), [1; 4]);
        assert_eq!(rank_four([0.2, 0.1, 0.1, 0.3]), [3, 1, 1, 4]);
        assert_eq!(
            rank_four([f64::INFINITY, 0.1, f64::INFINITY, 0.0]),
            [3, 2, 3, 1]
        );
    }

    #[test]
    fn rank_distribution() {
        let d = group_rank_analysis(&[[0.4, 0.3, 0.2, 0.1], [0.4, 0.2, 0.3, 0.1]]).unwrap();
        assert_eq!(d.fractions[0], [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.fractions[3], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.fractions[1], [0.0, 0.5, 0.5, 0.0]);
        assert!(group_rank_analysis(&[]).is_err());
        assert!(group_rank_analysis(&[[f64::NAN, 0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn report_text() {
        let t = table(&[vec![2.0, 0.0], vec![0.0, 1.0]], vec![0, 0]);
        let r = MetricsReport::evaluate(&t, 15).unwrap();
        assert_eq!(r.bins.total(), 2);
        assert!(r.to_text().contains("error_rate=0.5\n"));
        let csv = r.bins.to_csv_string();
        assert_eq!(csv.lines().count(), 16);
        assert!(csv.starts_with("bin,count,mean_confidence,mean_accuracy\n1,0,"));
    }
}
