//! Evaluation metrics over binary masks: Dice overlap, sensitivity, and
//! precision, plus the per-case record used by the evaluation log.
//!
//! Masks are float tensors holding 0/1 values; anything > 0.5 counts as
//! foreground, so thresholded probability maps can be passed directly.

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Element, Tensor};
use std::fmt::Write as _;

/// Voxel confusion counts between a predicted and a reference mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Count the four confusion cells in one pass.
pub fn confusion<E: Element>(pred: &Tensor<E>, reference: &Tensor<E>) -> Result<Confusion> {
    check_same_shape("confusion", pred.shape(), reference.shape())?;
    let half = E::from_f64(0.5);
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (p > half, r > half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

impl Confusion {
    /// `2·TP / (2·TP + FP + FN)`; both masks empty counts as perfect
    /// agreement (1.0).
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    /// `TP / (TP + FN)`; an empty denominator yields 1.0 when nothing was
    /// missed (TP = FP = FN = 0), else 0.0.
    pub fn sensitivity(&self) -> f64 {
        self.ratio(self.tp + self.fn_)
    }

    /// `TP / (TP + FP)`; degenerate denominators resolved as in
    /// [`Confusion::sensitivity`].
    pub fn precision(&self) -> f64 {
        self.ratio(self.tp + self.fp)
    }

    fn ratio(&self, den: u64) -> f64 {
        if den > 0 {
            self.tp as f64 / den as f64
        } else if self.fp == 0 && self.fn_ == 0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Dice similarity between two binary masks.
pub fn dice_coefficient<E: Element>(pred: &Tensor<E>, reference: &Tensor<E>) -> Result<f64> {
    Ok(confusion(pred, reference)?.dice())
}

/// Fraction of reference foreground that was found.
pub fn sensitivity<E: Element>(pred: &Tensor<E>, reference: &Tensor<E>) -> Result<f64> {
    Ok(confusion(pred, reference)?.sensitivity())
}

/// Fraction of predicted foreground that is correct.
pub fn precision<E: Element>(pred: &Tensor<E>, reference: &Tensor<E>) -> Result<f64> {
    Ok(confusion(pred, reference)?.precision())
}

/// Segmentation target: the lung field or the lesion regions inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Lung,
    Lesion,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Lung => "lung",
            Task::Lesion => "lesion",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lung" => Ok(Task::Lung),
            "lesion" => Ok(Task::Lesion),
            other => Err(Error::InvalidConfig {
                field: "task",
                reason: format!("expected lung|lesion, got {other:?}"),
            }),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated case.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub case_id: String,
    pub task: Task,
    pub dice: f64,
    pub sensitivity: f64,
    pub precision: f64,
}

impl MetricsRecord {
    pub fn from_masks<E: Element>(
        case_id: impl Into<String>,
        task: Task,
        pred: &Tensor<E>,
        reference: &Tensor<E>,
    ) -> Result<Self> {
        let c = confusion(pred, reference)?;
        Ok(MetricsRecord {
            case_id: case_id.into(),
            task,
            dice: c.dice(),
            sensitivity: c.sensitivity(),
            precision: c.precision(),
        })
    }
}

/// Header for [`metrics_table`] rows.
pub const METRICS_HEADER: &str = "case_id\ttask\tdice\tsensitivity\tprecision";

/// Tab-separated table: header, one row per case (6 decimal places), and a
/// final `mean` row with unweighted averages.
pub fn metrics_table(records: &[MetricsRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let mut sums = [0.0f64; 3];
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.case_id, r.task, r.dice, r.sensitivity, r.precision
        )
        .expect("string write cannot fail");
        sums[0] += r.dice;
        sums[1] += r.sensitivity;
        sums[2] += r.precision;
    }
    let n = records.len() as f64;
    writeln!(
        out,
        "mean\t{}\t{:.6}\t{:.6}\t{:.6}",
        records[0].task,
        sums[0] / n,
        sums[1] / n,
        sums[2] / n
    )
    .expect("string write cannot fail");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;

    fn mask(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::from_vec(Shape5::new(1, 1, 1, 1, n), data).unwrap()
    }

    #[test]
    fn identical_nonempty_masks_score_one() {
        let m = mask(vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(dice_coefficient(&m, &m).unwrap(), 1.0);
        assert_eq!(sensitivity(&m, &m).unwrap(), 1.0);
        assert_eq!(precision(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = mask(vec![1.0, 1.0, 0.0, 0.0]);
        let b = mask(vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_scores_half() {
        // |A| = |B| = 4, overlap 2 → 2·2/8 = 0.5.
        let a = mask(vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = mask(vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn both_empty_is_perfect_agreement() {
        let z = mask(vec![0.0; 8]);
        assert_eq!(dice_coefficient(&z, &z).unwrap(), 1.0);
        assert_eq!(sensitivity(&z, &z).unwrap(), 1.0);
        assert_eq!(precision(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn superset_and_subset_asymmetry() {
        let small = mask(vec![1.0, 0.0, 0.0, 0.0]);
        let big = mask(vec![1.0, 1.0, 1.0, 0.0]);
        // Prediction covers everything → nothing missed, some excess.
        assert_eq!(sensitivity(&big, &small).unwrap(), 1.0);
        assert!(precision(&big, &small).unwrap() < 1.0);
        // Prediction inside the reference → all correct, some missed.
        assert_eq!(precision(&small, &big).unwrap(), 1.0);
        assert!(sensitivity(&small, &big).unwrap() < 1.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let a = mask(vec![1.0, 1.0, 0.0, 1.0, 0.0]);
        let b = mask(vec![0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            dice_coefficient(&a, &b).unwrap(),
            dice_coefficient(&b, &a).unwrap()
        );
    }

    #[test]
    fn table_has_header_rows_and_mean() {
        let recs = vec![
            MetricsRecord {
                case_id: "a".into(),
                task: Task::Lesion,
                dice: 0.4,
                sensitivity: 0.5,
                precision: 0.6,
            },
            MetricsRecord {
                case_id: "b".into(),
                task: Task::Lesion,
                dice: 0.8,
                sensitivity: 0.7,
                precision: 0.6,
            },
        ];
        let table = metrics_table(&recs).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], METRICS_HEADER);
        assert!(lines[3].starts_with("mean\tlesion\t0.600000"));
        assert!(metrics_table(&[]).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = mask(vec![1.0, 0.0]);
        let b = mask(vec![1.0, 0.0, 0.0]);
        assert!(dice_coefficient(&a, &b).is_err());
    }
}
