//! Confusion-matrix accumulation and per-class IoU.

use crate::cloud::ClassId;
use crate::error::{Error, Result};

/// `C x C` counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore: Option<ClassId>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore: Option<ClassId>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::arg("confusion matrix needs at least one class"));
        }
        Ok(Self {
            num_classes,
            ignore,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn from_counts(num_classes: usize, ignore: Option<ClassId>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::arg(format!(
                "{} counts for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            ignore,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore(&self) -> Option<ClassId> {
        self.ignore
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts `(gt, pred)` pairs, skipping points whose ground truth is the
    /// ignore class. The matrix is untouched if any id is out of range.
    pub fn accumulate(&mut self, gt: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::arg(format!(
                "{} ground-truth labels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        let c = self.num_classes;
        if let Some(bad) = gt.iter().chain(pred).find(|&&l| l as usize >= c) {
            return Err(Error::arg(format!("class id {bad} out of range for {c} classes")));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if Some(g) == self.ignore {
                continue;
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes || other.ignore != self.ignore {
            return Err(Error::arg("cannot merge matrices with different class setups"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU `TP / (TP + FP + FN)`.
    ///
    /// Classes with an empty union, and the ignore class, get `None` and are
    /// left out of the mean unless `include_absent` is set, in which case
    /// empty-union classes count as 0.
    pub fn iou(&self, include_absent: bool) -> Result<IouReport> {
        let c = self.num_classes;
        let mut per_class = Vec::with_capacity(c);
        for k in 0..c {
            if Some(k as ClassId) == self.ignore {
                per_class.push(None);
                continue;
            }
            let tp = self.get(k, k);
            let row: u64 = (0..c).map(|p| self.get(k, p)).sum();
            let col: u64 = (0..c).map(|g| self.get(g, k)).sum();
            let union = row + col - tp;
            per_class.push(if union == 0 {
                include_absent.then_some(0.0)
            } else {
                Some(tp as f64 / union as f64)
            });
        }
        let included: Vec<f64> = per_class.iter().flatten().copied().collect();
        if included.is_empty() {
            return Err(Error::UndefinedMean);
        }
        let miou = included.iter().sum::<f64>() / included.len() as f64;
        Ok(IouReport { per_class, miou })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// Indexed by class id; `None` for excluded classes.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

impl IouReport {
    /// `iou_<id>=<value>` per included class, then `miou=<value>`.
    pub fn key_value_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .per_class
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| format!("iou_{k}={v:?}")))
            .collect();
        lines.push(format!("miou={:?}", self.miou));
        lines
    }

    /// Aligned human-readable table. `names[k]` labels class `k` when given.
    pub fn table(&self, names: &[String]) -> String {
        let mut s = String::from("class                 IoU\n");
        for (k, v) in self.per_class.iter().enumerate() {
            if let Some(v) = v {
                let name = names.get(k).cloned().unwrap_or_else(|| format!("class {k}"));
                s.push_str(&format!("{name:<20} {:>6.2}\n", v * 100.0));
            }
        }
        s.push_str(&format!("{:<20} {:>6.2}\n", "mIoU", self.miou * 100.0));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let mut cm = ConfusionMatrix::new(3, None).unwrap();
        cm.accumulate(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(cm.get(g, p), 0);
                }
            }
        }
        let r = cm.iou(false).unwrap();
        assert_eq!(r.miou, 1.0);
        assert!(r.per_class.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn two_class_hand_case() {
        let cm = ConfusionMatrix::from_counts(2, None, vec![3, 1, 1, 3]).unwrap();
        let r = cm.iou(false).unwrap();
        assert_eq!(r.per_class, vec![Some(0.6), Some(0.6)]);
        assert_eq!(r.miou, 0.6);
        assert_eq!(r.key_value_lines(), vec!["iou_0=0.6", "iou_1=0.6", "miou=0.6"]);
    }

    #[test]
    fn ignore_ground_truth_is_skipped() {
        let mut cm = ConfusionMatrix::new(3, Some(0)).unwrap();
        cm.accumulate(&[0, 0, 0], &[1, 2, 0]).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn absent_classes_excluded_or_zero() {
        let mut cm = ConfusionMatrix::new(4, Some(0)).unwrap();
        cm.accumulate(&[1, 1, 2], &[1, 1, 2]).unwrap();
        let r = cm.iou(false).unwrap();
        assert_eq!(r.per_class, vec![None, Some(1.0), Some(1.0), None]);
        assert_eq!(r.miou, 1.0);
        let r = cm.iou(true).unwrap();
        assert_eq!(r.per_class[3], Some(0.0));
        assert!((r.miou - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_has_no_mean() {
        let cm = ConfusionMatrix::new(3, None).unwrap();
        assert!(matches!(cm.iou(false), Err(Error::UndefinedMean)));
    }

    #[test]
    fn length_mismatch_and_range_errors() {
        let mut cm = ConfusionMatrix::new(3, None).unwrap();
        assert!(cm.accumulate(&[0, 1], &[0]).is_err());
        assert!(cm.accumulate(&[0], &[3]).is_err());
        assert_eq!(cm.total(), 0);
    }
}
