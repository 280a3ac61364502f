use super::NucleusInstance;
use serde::{Deserialize, Serialize};

/// Instance-level detection quality against a ground-truth set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub gt_count: usize,
    pub pred_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `TP / (TP + FP + FN)`; detection has no true negatives.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub match_iou: f64,
}

impl DetectionReport {
    pub const CSV_HEADER: &'static str =
        "gt_count,pred_count,true_positives,false_positives,false_negatives,accuracy,precision,recall,f1,match_iou";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.gt_count,
            self.pred_count,
            self.true_positives,
            self.false_positives,
            self.false_negatives,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.match_iou
        )
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy one-to-one matching by descending IoU. A pair counts as a true
/// positive when its IoU is at least `match_iou` and the masks overlap.
pub fn detection_report(predicted: &[NucleusInstance], ground_truth: &[NucleusInstance], match_iou: f64) -> DetectionReport {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in predicted.iter().enumerate() {
        let Some(pb) = p.mask.bbox() else { continue };
        for (gi, g) in ground_truth.iter().enumerate() {
            if !g.mask.bbox().is_some_and(|gb| gb.intersects(&pb)) {
                continue;
            }
            let inter = p.mask.intersection_area(&g.mask);
            if inter == 0 {
                continue;
            }
            let iou = inter as f64 / (p.area_px + g.area_px - inter) as f64;
            if iou >= match_iou {
                pairs.push((iou, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut pred_used = vec![false; predicted.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut tp = 0;
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    let fp = predicted.len() - tp;
    let fneg = ground_truth.len() - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if tp + fp + fneg == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    DetectionReport {
        gt_count: ground_truth.len(),
        pred_count: predicted.len(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        accuracy: ratio(tp, tp + fp + fneg),
        precision,
        recall,
        f1,
        match_iou,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelRuns;
    use crate::nuclei::Frame;

    fn rect(id: u64, x0: u32, y0: u32, x1: u32, y1: u32) -> NucleusInstance {
        let m = PixelRuns::from_pixels((y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))));
        NucleusInstance::from_mask(id, m, Frame::Global).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let set = vec![rect(1, 0, 0, 5, 5), rect(2, 10, 10, 15, 15)];
        let r = detection_report(&set, &set, 0.5);
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn one_of_two_found() {
        let gt = vec![rect(1, 0, 0, 10, 10), rect(2, 50, 50, 60, 60)];
        // 10x9 inside a 10x10: IoU 0.9
        let pred = vec![rect(1, 0, 0, 10, 9)];
        let r = detection_report(&pred, &gt, 0.5);
        assert_eq!((r.true_positives, r.false_negatives, r.false_positives), (1, 1, 0));
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.precision, 1.0);
    }

    #[test]
    fn f1_from_published_precision_recall() {
        assert!((f1_score(0.8344, 0.8616) - 0.8478).abs() <= 0.0005);
    }

    #[test]
    fn matching_is_one_to_one() {
        let gt = vec![rect(1, 0, 0, 10, 10)];
        let pred = vec![rect(1, 0, 0, 10, 10), rect(2, 0, 0, 10, 9)];
        let r = detection_report(&pred, &gt, 0.5);
        assert_eq!((r.true_positives, r.false_positives), (1, 1));
    }
}
