//! Pixel-level segmentation metrics, precision-recall sweeps and box-plot
//! statistics for per-image score distributions.

use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::{ops, Shape, Tensor};
use crate::mask::{BinaryMask, MaskError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Dims(#[from] MaskError),
    #[error("no pixels were evaluated")]
    Empty,
    #[error("threshold list is empty")]
    NoThresholds,
    #[error("thresholds must be strictly increasing inside (0, 1); offending value {0}")]
    BadThreshold(f64),
    #[error("cannot summarize an empty list of values")]
    NoValues,
    #[error("probability map has {found} values, expected {expected}")]
    MapLength { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Counts over the pixels inside `fov` (every pixel when `fov` is `None`).
pub fn confusion(
    pred: &BinaryMask,
    gt: &BinaryMask,
    fov: Option<&BinaryMask>,
) -> Result<ConfusionCounts, MetricsError> {
    pred.ensure_same_dims(gt)?;
    if let Some(f) = fov {
        f.ensure_same_dims(gt)?;
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if fov.is_some_and(|f| !f.data()[i]) {
            continue;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub se: f64,
    pub sp: f64,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sensitivity, specificity, accuracy, precision and F1 from counts.
///
/// F1 is evaluated as `2 TP / (2 TP + FP + FN)`, which equals the harmonic
/// mean of precision and recall and is exactly the Dice coefficient.
pub fn report(c: &ConfusionCounts) -> Result<MetricsReport, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let mut undefined = Vec::new();
    let se = ratio(c.tp, c.tp + c.fn_, "se", &mut undefined);
    let sp = ratio(c.tn, c.tn + c.fp, "sp", &mut undefined);
    let acc = ratio(c.tp + c.tn, c.total(), "acc", &mut undefined);
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "f1", &mut undefined);
    Ok(MetricsReport {
        se,
        sp,
        acc,
        precision,
        recall: se,
        f1,
        undefined,
    })
}

/// The 99 thresholds `0.01, 0.02, ..., 0.99`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when nothing was predicted positive (precision reported as 0).
    pub precision_defined: bool,
}

/// Binarizes a probability plane: foreground where `p >= threshold`.
pub fn threshold_map(prob: &[f32], width: usize, height: usize, threshold: f64) -> Result<BinaryMask, MetricsError> {
    if prob.len() != width * height {
        return Err(MetricsError::MapLength {
            expected: width * height,
            found: prob.len(),
        });
    }
    Ok(BinaryMask::from_vec(width, height, prob.iter().map(|&p| p as f64 >= threshold).collect())?)
}

/// One precision/recall point per threshold. Counts are accumulated over all
/// `(probability plane, truth, fov)` items, so a data set gives one pooled curve.
pub fn pr_curve(
    items: &[(&[f32], &BinaryMask, Option<&BinaryMask>)],
    thresholds: &[f64],
) -> Result<Vec<PrPoint>, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let mut prev = 0.0;
    for &t in thresholds {
        if !(t > prev && t < 1.0) {
            return Err(MetricsError::BadThreshold(t));
        }
        prev = t;
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut c = ConfusionCounts::default();
        for &(prob, gt, fov) in items {
            let pred = threshold_map(prob, gt.width(), gt.height(), t)?;
            c = c + confusion(&pred, gt, fov)?;
        }
        let predicted = c.tp + c.fp;
        let positives = c.tp + c.fn_;
        out.push(PrPoint {
            threshold: t,
            precision: if predicted == 0 { 0.0 } else { c.tp as f64 / predicted as f64 },
            recall: if positives == 0 { 0.0 } else { c.tp as f64 / positives as f64 },
            precision_defined: predicted > 0,
        });
    }
    Ok(out)
}

/// CSV with header `threshold,precision,recall`.
pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values still within `1.5 * IQR` of the quartiles.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::NoValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    let lower_whisker = inside.clone().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside.fold(f64::NEG_INFINITY, f64::max);
    Ok(BoxStats {
        min: sorted[0],
        q1,
        median: quantile(&sorted, 0.5),
        q3,
        max: sorted[sorted.len() - 1],
        lower_whisker,
        upper_whisker,
        outliers: sorted.iter().copied().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect(),
    })
}

/// Bilinearly resizes a network-resolution probability plane back to the
/// native `width` x `height` of the dataset image.
pub fn to_native(prob: &[f32], size: (usize, usize), width: usize, height: usize) -> Result<Vec<f32>, MetricsError> {
    let (h, w) = size;
    if prob.len() != h * w {
        return Err(MetricsError::MapLength {
            expected: h * w,
            found: prob.len(),
        });
    }
    let t = Tensor::from_vec(Shape::new(1, 1, h, w), prob.to_vec()).expect("length checked");
    let resized = ops::resize_bilinear(&t, height, width).map_err(|_| MetricsError::Empty)?;
    Ok(resized.into_data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Data-set level report: metrics of the pooled counts plus per-image detail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub se: f64,
    pub sp: f64,
    pub acc: f64,
    pub precision: f64,
    pub f1: f64,
    pub per_image: Vec<ImageScore>,
}

impl EvalReport {
    /// Pools the per-image confusion counts before computing the headline metrics.
    pub fn from_images(per_image: Vec<ImageScore>) -> Result<Self, MetricsError> {
        if per_image.is_empty() {
            return Err(MetricsError::Empty);
        }
        let pooled = report(&per_image.iter().map(|s| s.counts).sum())?;
        Ok(Self {
            se: pooled.se,
            sp: pooled.sp,
            acc: pooled.acc,
            precision: pooled.precision,
            f1: pooled.f1,
            per_image,
        })
    }

    /// Spread of per-image F1 scores.
    pub fn f1_distribution(&self) -> Result<BoxStats, MetricsError> {
        let f1s: Vec<f64> = self.per_image.iter().map(|s| s.metrics.f1).collect();
        boxplot_stats(&f1s)
    }

    /// `name,tp,tn,fp,fn,se,sp,acc,precision,f1` rows in report order.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("name,tp,tn,fp,fn,se,sp,acc,precision,f1\n");
        for s in &self.per_image {
            let (c, m) = (&s.counts, &s.metrics);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                s.name, c.tp, c.tn, c.fp, c.fn_, m.se, m.sp, m.acc, m.precision, m.f1
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = report(&ConfusionCounts {
            tp: 3,
            tn: 5,
            fp: 1,
            fn_: 1,
        })
        .unwrap();
        assert_eq!(r.se, 0.75);
        assert!((r.sp - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.acc, 0.8);
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.f1, 0.75);
        assert!(r.undefined.is_empty());
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let r = report(&ConfusionCounts {
            tp: 0,
            tn: 4,
            fp: 0,
            fn_: 0,
        })
        .unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!(r.undefined, vec!["se", "precision", "f1"]);
        assert_eq!(report(&ConfusionCounts::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn quartiles() {
        let b = boxplot_stats(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert!(b.outliers.is_empty());
        let one = boxplot_stats(&[0.7]).unwrap();
        assert_eq!((one.min, one.q1, one.median, one.q3, one.max), (0.7, 0.7, 0.7, 0.7, 0.7));
        let flat = boxplot_stats(&[2.0; 6]).unwrap();
        assert_eq!(flat.q3 - flat.q1, 0.0);
        assert!(flat.outliers.is_empty());
        let spread = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(spread.outliers, vec![100.0]);
        assert_eq!(spread.upper_whisker, 4.0);
        assert_eq!(boxplot_stats(&[]), Err(MetricsError::NoValues));
    }

    #[test]
    fn threshold_grid() {
        let t = default_thresholds();
        assert_eq!(t.len(), 99);
        assert_eq!((t[0], t[98]), (0.01, 0.99));
    }
}
