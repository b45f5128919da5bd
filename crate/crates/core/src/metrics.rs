//! Confusion-matrix accounting and IoU metrics.

use crate::error::{Error, Result};
use crate::io::{LabelVector, PointCloud};

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes], ignored: 0 }
    }

    pub fn from_counts(counts: &[Vec<u64>]) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(Self { num_classes: k, counts: counts.concat(), ignored: 0 })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn record(&mut self, gt: u32, pred: u32) {
        self.counts[gt as usize * self.num_classes + pred as usize] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("merging confusion matrices of different sizes"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.ignored += other.ignored;
        Ok(())
    }

    /// Per-class IoU; `None` for classes absent from both ground truth and predictions.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..k).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|g| self.get(g, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    fn require_points(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::NoEvaluatedPoints)
        } else {
            Ok(())
        }
    }

    /// Mean IoU over classes present in ground truth or predictions.
    pub fn miou(&self) -> Result<f64> {
        self.require_points()?;
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Mean IoU counting absent classes as 0.
    pub fn miou_all_classes(&self) -> Result<f64> {
        self.require_points()?;
        Ok(self.class_iou().into_iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / self.num_classes as f64)
    }

    /// IoU weighted by ground-truth class frequency.
    pub fn fw_iou(&self) -> Result<f64> {
        self.require_points()?;
        let total = self.total() as f64;
        let k = self.num_classes;
        Ok(self
            .class_iou()
            .iter()
            .enumerate()
            .map(|(c, iou)| {
                let freq = (0..k).map(|p| self.get(c, p)).sum::<u64>() as f64 / total;
                freq * iou.unwrap_or(0.0)
            })
            .sum())
    }

    /// `class,iou` rows, then `miou` and `fw_iou` rows. Absent classes print `nan`.
    pub fn report_csv(&self) -> Result<String> {
        let mut out = String::from("class,iou\n");
        for (c, iou) in self.class_iou().iter().enumerate() {
            match iou {
                Some(v) => out.push_str(&format!("{c},{v}\n")),
                None => out.push_str(&format!("{c},nan\n")),
            }
        }
        out.push_str(&format!("miou,{}\n", self.miou()?));
        out.push_str(&format!("fw_iou,{}\n", self.fw_iou()?));
        Ok(out)
    }
}

pub fn confusion_matrix(pred: &LabelVector, gt: &LabelVector, num_classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (i, (&p, &g)) in pred.labels.iter().zip(&gt.labels).enumerate() {
        if gt.is_ignore(i) {
            cm.ignored += 1;
            continue;
        }
        if pred.is_ignore(i) {
            return Err(Error::IgnoreLabel(i));
        }
        for label in [p, g] {
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        cm.record(g, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub r_lo: f64,
    pub r_hi: f64,
    pub confusion: ConfusionMatrix,
}

impl Stratum {
    pub fn miou(&self) -> Result<f64> {
        self.confusion.miou()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrataReport {
    pub strata: Vec<Stratum>,
    /// Points outside every stratum.
    pub dropped: ConfusionMatrix,
}

impl StrataReport {
    /// `r_lo,r_hi,miou` rows; strata without points print `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r_lo,r_hi,miou\n");
        for s in &self.strata {
            let v = s.miou().map_or_else(|_| "nan".to_string(), |m| m.to_string());
            out.push_str(&format!("{},{},{}\n", s.r_lo, s.r_hi, v));
        }
        out
    }
}

/// Splits points by top-view radius into `[e_j, e_{j+1})` strata.
pub fn stratified_miou(
    pred: &LabelVector,
    gt: &LabelVector,
    cloud: &PointCloud,
    bin_edges: &[f64],
) -> Result<StrataReport> {
    if bin_edges.len() < 2 {
        return Err(Error::invalid("stratification needs at least two edges"));
    }
    if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bin edges must be strictly ascending"));
    }
    if cloud.len() != gt.len() || pred.len() != gt.len() {
        return Err(Error::shape("cloud, predictions and labels differ in length"));
    }
    let k = gt.num_classes();
    let mut strata: Vec<Stratum> = bin_edges
        .windows(2)
        .map(|w| Stratum { r_lo: w[0], r_hi: w[1], confusion: ConfusionMatrix::new(k) })
        .collect();
    let mut dropped = ConfusionMatrix::new(k);

    for (i, p) in cloud.points.iter().enumerate() {
        let r = p.radius_xy();
        let j = bin_edges.partition_point(|&e| e <= r);
        let cm = if j == 0 || j == bin_edges.len() { &mut dropped } else { &mut strata[j - 1].confusion };
        if gt.is_ignore(i) {
            cm.ignored += 1;
            continue;
        }
        let (pl, gl) = (pred.labels[i], gt.labels[i]);
        if pl as usize >= k {
            return Err(Error::LabelOutOfRange { label: pl, num_classes: k });
        }
        cm.record(gl, pl);
    }
    Ok(StrataReport { strata, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Point;
    use proptest::prelude::*;

    fn lv(v: &[u32], k: usize) -> LabelVector {
        LabelVector::new(v.to_vec(), k).unwrap()
    }

    #[test]
    fn hand_enumerated_confusion() {
        let cm = confusion_matrix(&lv(&[0, 0, 1], 2), &lv(&[0, 1, 1], 2), 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0], vec![1, 1]]);
        // TP0=1 FP0=1 FN0=0; TP1=1 FP1=0 FN1=1
        assert_eq!(cm.class_iou(), vec![Some(0.5), Some(0.5)]);
        assert_eq!(cm.miou().unwrap(), 0.5);
    }

    #[test]
    fn perfect_prediction() {
        let gt = lv(&[0, 1, 2, 2, 1, 0, 3], 4);
        let cm = confusion_matrix(&gt, &gt, 4).unwrap();
        for c in 0..4 {
            for p in 0..4 {
                assert_eq!(cm.get(c, p) > 0, c == p);
            }
        }
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert_eq!(cm.fw_iou().unwrap(), 1.0);
    }

    #[test]
    fn all_ignored() {
        let gt = lv(&[3, 3, 3], 3);
        let cm = confusion_matrix(&lv(&[0, 1, 2], 3), &gt, 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.ignored, 3);
        assert!(matches!(cm.miou(), Err(Error::NoEvaluatedPoints)));
    }

    #[test]
    fn absent_classes_excluded() {
        let cm = confusion_matrix(&lv(&[0, 1], 4), &lv(&[0, 1], 4), 4).unwrap();
        assert_eq!(cm.class_iou()[2], None);
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert_eq!(cm.miou_all_classes().unwrap(), 0.5);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion_matrix(&lv(&[0], 2), &lv(&[0, 1], 2), 2).is_err());
        assert!(confusion_matrix(&lv(&[2], 2), &lv(&[0], 2), 2).is_err());
    }

    #[test]
    fn report_layout() {
        let cm = confusion_matrix(&lv(&[0, 0, 1], 3), &lv(&[0, 1, 1], 3), 3).unwrap();
        let csv = cm.report_csv().unwrap();
        assert!(csv.starts_with("class,iou\n0,0.5\n1,0.5\n2,nan\nmiou,0.5\n"));
    }

    fn ring_cloud(radii: &[f64]) -> PointCloud {
        PointCloud::new(radii.iter().map(|&r| Point::new(r, 0.0, 0.0, 0.0)).collect())
    }

    #[test]
    fn single_stratum_equals_global() {
        let gt = lv(&[0, 1, 1, 2, 0], 3);
        let pred = lv(&[0, 1, 2, 2, 1], 3);
        let cloud = ring_cloud(&[1.0, 5.0, 10.0, 20.0, 49.0]);
        let rep = stratified_miou(&pred, &gt, &cloud, &[0.0, f64::INFINITY]).unwrap();
        let global = confusion_matrix(&pred, &gt, 3).unwrap();
        assert_eq!(rep.strata[0].miou().unwrap(), global.miou().unwrap());
    }

    #[test]
    fn empty_strata_report_no_points() {
        let gt = lv(&[0, 1], 2);
        let cloud = ring_cloud(&[1.0, 2.0]);
        let rep = stratified_miou(&gt, &gt, &cloud, &[0.0, 10.0, 20.0, 30.0]).unwrap();
        assert!(rep.strata[0].miou().is_ok());
        assert!(matches!(rep.strata[1].miou(), Err(Error::NoEvaluatedPoints)));
        assert_eq!(rep.to_csv().lines().count(), 4);
        assert!(stratified_miou(&gt, &gt, &cloud, &[0.0, 10.0, 5.0]).is_err());
        assert!(stratified_miou(&gt, &gt, &cloud, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn strata_sum_to_global(
            rows in prop::collection::vec((0u32..4, 0u32..3, 0.0f64..60.0), 1..200),
            shift in 0usize..200,
        ) {
            let gt = lv(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), 3);
            let pred = lv(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), 3);
            let cloud = ring_cloud(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
            let rep = stratified_miou(&pred, &gt, &cloud, &[5.0, 10.0, 20.0, 50.0]).unwrap();
            let mut sum = rep.dropped.clone();
            for s in &rep.strata {
                sum.merge(&s.confusion).unwrap();
            }
            prop_assert_eq!(&sum, &confusion_matrix(&pred, &gt, 3).unwrap());

            // joint shuffle leaves metrics unchanged
            let n = rows.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let gt2 = lv(&perm.iter().map(|&i| rows[i].0).collect::<Vec<_>>(), 3);
            let pred2 = lv(&perm.iter().map(|&i| rows[i].1).collect::<Vec<_>>(), 3);
            let a = confusion_matrix(&pred, &gt, 3).unwrap();
            let b = confusion_matrix(&pred2, &gt2, 3).unwrap();
            prop_assert_eq!(&a, &b);

            if let (Ok(fw), ious) = (a.fw_iou(), a.class_iou()) {
                let present: Vec<f64> = ious.into_iter().flatten().collect();
                for v in &present {
                    prop_assert!((0.0..=1.0).contains(v));
                }
                let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fw >= lo - 1e-12 && fw <= hi + 1e-12);
            }
        }
    }
}
