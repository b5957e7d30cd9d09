//! Segmentation scores: per-class IoU and weighted F-measure.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::{LabelId, LabelMap};
use crate::error::{contract, Result};

/// `beta^2` of the F-measure.
pub const F_BETA_SQ: f64 = 0.3;

/// How per-class counts are pooled over a test set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Intersections and unions are summed over all test pixels.
    #[default]
    Global,
    /// Each class score is the mean over the images where the class occurs
    /// in the prediction or the ground truth.
    PerImage,
}

/// Per-class pixel counts for one or more images.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCounts {
    /// Predicted and true.
    pub intersection: Vec<u64>,
    /// Predicted or true.
    pub union: Vec<u64>,
    pub predicted: Vec<u64>,
    pub truth: Vec<u64>,
}

impl ClassCounts {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            intersection: vec![0; num_labels],
            union: vec![0; num_labels],
            predicted: vec![0; num_labels],
            truth: vec![0; num_labels],
        }
    }

    /// Adds the counts of one prediction against its ground truth.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.width() != truth.width() || pred.height() != truth.height() {
            return Err(contract(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.width(),
                pred.height(),
                truth.width(),
                truth.height()
            )));
        }
        let l = self.union.len();
        let index = |label: LabelId| -> Result<usize> {
            let k = label as usize - 1;
            if k < l {
                Ok(k)
            } else {
                Err(contract(format!("label {label} outside 1..={l}")))
            }
        };
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            let (p, t) = (index(p)?, index(t)?);
            self.predicted[p] += 1;
            self.truth[t] += 1;
            self.union[p] += 1;
            if p == t {
                self.intersection[p] += 1;
            } else {
                self.union[t] += 1;
            }
        }
        Ok(())
    }


    /// IoU per class; `None` where the class appears in neither map.
    pub fn iou(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    pub fn f_measure(&self) -> Vec<FScore> {
        (0..self.union.len())
            .map(|k| {
                let tp = self.intersection[k] as f64;
                let precision = ratio(tp, self.predicted[k] as f64);
                let recall = ratio(tp, self.truth[k] as f64);
                FScore {
                    score: ratio(
                        (1.0 + F_BETA_SQ) * precision * recall,
                        F_BETA_SQ * precision + recall,
                    ),
                    absent: self.union[k] == 0,
                }
            })
            .collect()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FScore {
    pub score: f64,
    /// The class is empty in both prediction and ground truth.
    pub absent: bool,
}

/// Per-class F-measure pooled over all pairs.
pub fn weighted_f_measure(preds: &[LabelMap], truths: &[LabelMap], num_labels: usize) -> Result<Vec<FScore>> {
    Ok(pooled_counts(preds, truths, num_labels)?.f_measure())
}

fn pooled_counts(preds: &[LabelMap], truths: &[LabelMap], num_labels: usize) -> Result<ClassCounts> {
    if preds.len() != truths.len() {
        return Err(contract(format!(
            "{} predictions for {} ground-truth maps",
            preds.len(),
            truths.len()
        )));
    }
    let mut counts = ClassCounts::zeros(num_labels);
    for (k, (p, t)) in preds.iter().zip(truths).enumerate() {
        counts.accumulate(p, t).map_err(|e| contract(format!("record {k}: {e}")))?;
    }
    Ok(counts)
}

/// Scores of one prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Indexed by `label - 1`; `None` for classes absent from the test set.
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub wfm: Vec<Option<f64>>,
    pub records: usize,
}

impl EvalReport {
    /// `{"iou": {name: value|null}, "mean_iou", "wfm": {...}, "records"}`.
    pub fn to_json(&self, names: &[String]) -> Value {
        let per_class = |values: &[Option<f64>]| -> Value {
            let mut m = Map::new();
            for (k, v) in values.iter().enumerate() {
                let name = names.get(k).cloned().unwrap_or_else(|| format!("label_{}", k + 1));
                m.insert(name, v.map_or(Value::Null, Value::from));
            }
            Value::Object(m)
        };
        json!({
            "iou": per_class(&self.iou),
            "mean_iou": self.mean_iou,
            "wfm": per_class(&self.wfm),
            "records": self.records,
        })
    }
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// IoU and F-measure of `preds` against `truths`. The mean IoU averages the
/// classes that occur somewhere in the test set.
pub fn iou_report(
    preds: &[LabelMap],
    truths: &[LabelMap],
    num_labels: usize,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    let (iou, wfm) = match aggregation {
        Aggregation::Global => {
            let counts = pooled_counts(preds, truths, num_labels)?;
            let wfm = counts.f_measure().into_iter().map(|f| (!f.absent).then_some(f.score)).collect();
            (counts.iou(), wfm)
        }
        Aggregation::PerImage => {
            let mut iou_sum = vec![(0.0, 0usize); num_labels];
            let mut f_sum = vec![(0.0, 0usize); num_labels];
            if preds.len() != truths.len() {
                return Err(contract("prediction and ground-truth counts differ"));
            }
            for (k, (p, t)) in preds.iter().zip(truths).enumerate() {
                let mut c = ClassCounts::zeros(num_labels);
                c.accumulate(p, t).map_err(|e| contract(format!("record {k}: {e}")))?;
                for (k, v) in c.iou().into_iter().enumerate() {
                    if let Some(v) = v {
                        iou_sum[k].0 += v;
                        iou_sum[k].1 += 1;
                    }
                }
                for (k, f) in c.f_measure().into_iter().enumerate() {
                    if !f.absent {
                        f_sum[k].0 += f.score;
                        f_sum[k].1 += 1;
                    }
                }
            }
            let avg = |s: &[(f64, usize)]| s.iter().map(|(v, n)| (*n > 0).then(|| v / *n as f64)).collect();
            (avg(&iou_sum), avg(&f_sum))
        }
    };
    Ok(EvalReport {
        mean_iou: mean_present(&iou),
        iou,
        wfm,
        records: preds.len(),
    })
}
