//! Evaluation mathematics: agreement, confusion matrices, pixel metrics,
//! ROC/AUC, quadratic kappa and consensus labels.

use crate::mask::BinaryMask;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Display;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("mask dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("kappa undefined: expected disagreement is zero")]
    DegenerateMarginals,
    #[error("no votes")]
    EmptyVotes,
    #[error("label {0:?} is not one of the matrix classes")]
    UnknownLabel(String),
}

fn check_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        Err(MetricsError::LengthMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// `0/0` is taken as perfect agreement.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Percentage of positions where the two label lists agree.
pub fn percentage_agreement<T: PartialEq>(gt: &[T], pred: &[T]) -> Result<f64, MetricsError> {
    check_len(gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let agree = gt.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(100.0 * agree as f64 / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub counts: BinaryCounts,
}

impl BinaryCounts {
    pub fn metrics(self) -> BinaryMetrics {
        let BinaryCounts { tp, fp, fn_, tn } = self;
        let recall = ratio(tp, tp + fn_);
        BinaryMetrics {
            iou: ratio(tp, tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall,
            sensitivity: recall,
            specificity: ratio(tn, tn + fp),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            counts: self,
        }
    }
}

pub fn binary_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<BinaryCounts, MetricsError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let tp = pred.and(gt).count();
    let p = pred.count();
    let g = gt.count();
    let total = pred.len() as u64;
    Ok(BinaryCounts {
        tp,
        fp: p - tp,
        fn_: g - tp,
        tn: total + tp - p - g,
    })
}

pub fn binary_pixel_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<BinaryMetrics, MetricsError> {
    Ok(binary_counts(pred, gt)?.metrics())
}

/// ROC points `(fpr, tpr)` from the strictest threshold down, starting at
/// `(0, 0)`. Tied scores move both rates in one step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_len(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / neg, tp / pos));
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`]; equals the Mann-Whitney statistic
/// with ties credited one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let pts = roc_curve(scores, labels)?;
    Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[i][j]`: ground truth `i`, prediction `j`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(MetricsError::DimensionMismatch(format!(
                "confusion matrix must be {0}x{0}",
                labels.len()
            )));
        }
        Ok(Self { labels, counts })
    }

    /// Builds the matrix over `labels` (in that order) from paired lists.
    pub fn from_pairs<T: Display>(labels: &[T], gt: &[T], pred: &[T]) -> Result<Self, MetricsError> {
        check_len(gt.len(), pred.len())?;
        let names: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        let index = |v: &T| {
            let s = v.to_string();
            names.iter().position(|n| *n == s).ok_or(MetricsError::UnknownLabel(s))
        };
        let mut cm = Self::new(names.clone());
        for (g, p) in gt.iter().zip(pred) {
            cm.counts[index(g)?][index(p)?] += 1;
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn percentage_agreement(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::EmptyMatrix),
            t => Ok(100.0 * self.trace() as f64 / t as f64),
        }
    }

    /// One-vs-rest counts for class `i`.
    pub fn class_counts(&self, i: usize) -> BinaryCounts {
        let tp = self.counts[i][i];
        let row: u64 = self.counts[i].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[i]).sum();
        BinaryCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }

    /// Plain-text grid with ground truth down the side.
    pub fn render_grid(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut out = format!("{:>width$}", "gt\\pr");
        for l in &self.labels {
            out += &format!(" {l:>width$}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out += &format!("{l:>width$}");
            for c in row {
                out += &format!(" {c:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Quadratic-weighted Cohen's kappa, classes taken in matrix order.
pub fn quadratic_kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let k = cm.k();
    let total = cm.total() as f64;
    if total == 0.0 {
        return Err(MetricsError::EmptyMatrix);
    }
    if k < 2 {
        return Err(MetricsError::DegenerateMarginals);
    }
    let rows: Vec<f64> = cm.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..k).map(|j| cm.counts.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let denom = ((k - 1) * (k - 1)) as f64;
    let (mut wo, mut we) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64) - (j as f64)).powi(2) / denom;
            wo += w * cm.counts[i][j] as f64;
            we += w * rows[i] * cols[j] / total;
        }
    }
    if we == 0.0 {
        return Err(MetricsError::DegenerateMarginals);
    }
    Ok(1.0 - wo / we)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consensus<T> {
    Label(T),
    Unresolved,
}

/// Strict-majority vote; anything short of a majority is unresolved.
pub fn consensus_label<T: Ord + Clone>(votes: &[T]) -> Result<Consensus<T>, MetricsError> {
    if votes.is_empty() {
        return Err(MetricsError::EmptyVotes);
    }
    let mut tally: BTreeMap<&T, usize> = BTreeMap::new();
    for v in votes {
        *tally.entry(v).or_insert(0) += 1;
    }
    Ok(tally
        .into_iter()
        .find(|&(_, n)| 2 * n > votes.len())
        .map_or(Consensus::Unresolved, |(v, _)| Consensus::Label(v.clone())))
}

pub const ALGORITHM: &str = "algorithm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    /// Raters in name order, then the algorithm.
    pub names: Vec<String>,
    /// Symmetric pairwise percentage agreement.
    pub pa: Vec<Vec<f64>>,
    /// Algorithm (prediction) against each rater (ground truth).
    pub confusion: BTreeMap<String, ConfusionMatrix>,
}

impl AgreementTable {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.pa[i][j])
    }

    pub fn render(&self) -> String {
        let w = self.names.iter().map(|n| n.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:w$}", "");
        for n in &self.names {
            out += &format!(" {n:>w$}");
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.pa) {
            out += &format!("{n:>w$}");
            for v in row {
                out += &format!(" {v:>w$.2}");
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise agreement between every rater and the algorithm. `labels` fixes
/// the class order of the confusion matrices.
pub fn agreement_matrix<T: PartialEq + Display>(
    raters: &BTreeMap<String, Vec<T>>,
    algo: &[T],
    labels: &[T],
) -> Result<AgreementTable, MetricsError> {
    for v in raters.values() {
        check_len(v.len(), algo.len())?;
    }
    let mut names: Vec<String> = raters.keys().cloned().collect();
    let mut lists: Vec<&[T]> = raters.values().map(Vec::as_slice).collect();
    names.push(ALGORITHM.to_string());
    lists.push(algo);
    let n = names.len();
    let mut pa = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = percentage_agreement(lists[i], lists[j])?;
            pa[i][j] = v;
            pa[j][i] = v;
        }
    }
    let mut confusion = BTreeMap::new();
    for (name, list) in raters {
        confusion.insert(name.clone(), ConfusionMatrix::from_pairs(labels, list, algo)?);
    }
    Ok(AgreementTable { names, pa, confusion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    #[serde(flatten)]
    pub metrics: BinaryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub pa: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    /// `None` when undefined (fewer than two classes in use).
    pub kappa_quadratic: Option<f64>,
    pub auc: Option<f64>,
}

/// Category-level comparison of predictions against ground truth.
pub fn eval_categories<T: PartialEq + Display>(labels: &[T], gt: &[T], pred: &[T]) -> Result<EvalReport, MetricsError> {
    check_len(gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let confusion = ConfusionMatrix::from_pairs(labels, gt, pred)?;
    let per_class = (0..confusion.k())
        .map(|i| ClassMetrics {
            label: confusion.labels[i].clone(),
            metrics: confusion.class_counts(i).metrics(),
        })
        .collect();
    Ok(EvalReport {
        n: gt.len(),
        pa: confusion.percentage_agreement()?,
        kappa_quadratic: quadratic_kappa(&confusion).ok(),
        per_class,
        confusion,
        auc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, 0, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn pa_examples() {
        assert_eq!(percentage_agreement(&["P", "N"], &["P", "N"]).unwrap(), 100.0);
        let v = percentage_agreement(&["P", "N", "P"], &["P", "P", "P"]).unwrap();
        assert!((v - 66.666_666_666_666_67).abs() < 1e-9);
        assert_eq!(percentage_agreement(&["P", "N"], &["N", "P"]).unwrap(), 0.0);
        assert_eq!(percentage_agreement::<u8>(&[], &[]), Err(MetricsError::EmptyInput));
        assert!(matches!(percentage_agreement(&[1], &[1, 2]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn pixel_metrics_examples() {
        let a = rect_mask(20, 20, 0, 0, 10, 10);
        let m = binary_pixel_metrics(&a, &a).unwrap();
        assert_eq!((m.iou, m.precision, m.recall, m.specificity, m.f1), (1.0, 1.0, 1.0, 1.0, 1.0));
        let b = rect_mask(20, 20, 10, 10, 20, 20);
        let m = binary_pixel_metrics(&a, &b).unwrap();
        assert_eq!(m.iou, 0.0);
        assert_eq!(m.specificity, 200.0 / 300.0);
        let c = rect_mask(20, 20, 0, 5, 10, 15);
        assert!((binary_pixel_metrics(&a, &c).unwrap().iou - 1.0 / 3.0).abs() < 1e-15);
        assert!(binary_pixel_metrics(&a, &rect_mask(10, 20, 0, 0, 1, 1)).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn kappa_examples() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let diag = ConfusionMatrix::from_counts(labels.clone(), vec![vec![3, 0], vec![0, 5]]).unwrap();
        assert_eq!(quadratic_kappa(&diag).unwrap(), 1.0);
        let uni = ConfusionMatrix::from_counts(labels.clone(), vec![vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(quadratic_kappa(&uni).unwrap(), 0.0);
        let one = ConfusionMatrix::from_counts(labels.clone(), vec![vec![4, 0], vec![0, 0]]).unwrap();
        assert_eq!(quadratic_kappa(&one), Err(MetricsError::DegenerateMarginals));
        let empty = ConfusionMatrix::new(labels);
        assert_eq!(quadratic_kappa(&empty), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_label(&["P", "P", "N", "P"]).unwrap(), Consensus::Label("P"));
        assert_eq!(consensus_label(&["P", "P", "N", "N"]).unwrap(), Consensus::Unresolved);
        assert_eq!(consensus_label(&["N"]).unwrap(), Consensus::Label("N"));
        assert_eq!(consensus_label(&["A", "B", "C"]).unwrap(), Consensus::<&str>::Unresolved);
        assert_eq!(consensus_label::<u8>(&[]), Err(MetricsError::EmptyVotes));
    }

    #[test]
    fn agreement_three_raters() {
        let p = |s: &str| s.chars().map(|c| c.to_string()).collect::<Vec<_>>();
        let mut raters = BTreeMap::new();
        raters.insert("r1".to_string(), p("PNPN"));
        raters.insert("r2".to_string(), p("PNPP"));
        raters.insert("r3".to_string(), p("NNPN"));
        let algo = p("PPPN");
        let labels = p("NP");
        let t = agreement_matrix(&raters, &algo, &labels).unwrap();
        assert_eq!(t.get("r1", "r2"), Some(75.0));
        assert_eq!(t.get("r1", "r3"), Some(75.0));
        assert_eq!(t.get("r2", "r3"), Some(50.0));
        assert_eq!(t.get("r1", ALGORITHM), Some(75.0));
        assert_eq!(t.get("r2", ALGORITHM), Some(50.0));
        assert_eq!(t.get(ALGORITHM, "r3"), Some(50.0));
        assert_eq!(t.get("r2", "r2"), Some(100.0));
        assert_eq!(t.confusion["r1"].counts, vec![vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn grid_renders_every_cell() {
        let cm = ConfusionMatrix::from_counts(vec!["neg".into(), "pos".into()], vec![vec![7, 1], vec![2, 11]]).unwrap();
        let g = cm.render_grid();
        assert_eq!(g.lines().count(), 3);
        assert!(g.contains("11") && g.contains("neg"));
    }

    #[test]
    fn eval_report_per_class() {
        let r = eval_categories(&["N", "P"], &["P", "N", "P", "P"], &["P", "N", "N", "P"]).unwrap();
        assert_eq!(r.pa, 75.0);
        let pos = &r.per_class[1].metrics;
        assert_eq!(pos.counts, BinaryCounts { tp: 2, fp: 0, fn_: 1, tn: 1 });
    }
}
