//! Page-level segmentation metrics.
//!
//! IoU is kept as exact integer counts. Pages where neither prediction nor
//! ground truth has a pixel of the class are true negatives and are left out
//! of mIoU. Precision and recall classify every page as TP, TN, FP or FN at
//! an IoU threshold and count pages, not instances.

mod report;
mod stats;

pub use report::{
    read_records, summarize, write_records, CellSummary, EvalReport, PageRecord, ReportOptions,
    ReportRow, RunMetrics, WelchSummary, AVERAGE_ROW,
};
pub use stats::{
    mean_difference_ci, significance_stars, student_t_cdf, welch_t_test, RunStats, WelchResult,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::ClassMask;

/// Packed binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    words: Vec<u64>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Bitmap {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(usize) -> bool) -> Self {
        let mut b = Bitmap::new(width, height);
        for i in 0..width as usize * height as usize {
            if f(i) {
                b.words[i / 64] |= 1 << (i % 64);
            }
        }
        b
    }

    /// Pixels of `mask` equal to `class`.
    pub fn from_class(mask: &ClassMask, class: u8) -> Self {
        Bitmap::from_fn(mask.width, mask.height, |i| mask.labels[i] == class)
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        if v {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Predicted and ground-truth pixels of one class on one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub predicted: Bitmap,
    pub truth: Bitmap,
}

impl MaskPair {
    pub fn new(predicted: Bitmap, truth: Bitmap) -> Result<Self> {
        if (predicted.width, predicted.height) != (truth.width, truth.height) {
            return Err(Error::DimensionMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                predicted.width, predicted.height, truth.width, truth.height
            )));
        }
        Ok(MaskPair { predicted, truth })
    }

    pub fn from_masks(predicted: &ClassMask, truth: &ClassMask, class: u8) -> Result<Self> {
        MaskPair::new(
            Bitmap::from_class(predicted, class),
            Bitmap::from_class(truth, class),
        )
    }
}

/// Exact IoU counts for one image and class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IoUResult {
    pub intersection: u64,
    pub union: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl IoUResult {
    /// `None` when the union is empty.
    pub fn value(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }

    pub fn is_defined(&self) -> bool {
        self.union > 0
    }
}

pub fn iou(pair: &MaskPair) -> IoUResult {
    let (mut inter, mut uni, mut p, mut g) = (0u64, 0u64, 0u64, 0u64);
    for (a, b) in pair.predicted.words.iter().zip(&pair.truth.words) {
        inter += (a & b).count_ones() as u64;
        uni += (a | b).count_ones() as u64;
        p += a.count_ones() as u64;
        g += b.count_ones() as u64;
    }
    IoUResult {
        intersection: inter,
        union: uni,
        predicted: p,
        truth: g,
    }
}

/// Counts for one class between two label masks, without building bitmaps.
pub fn iou_from_masks(predicted: &ClassMask, truth: &ClassMask, class: u8) -> Result<IoUResult> {
    if (predicted.width, predicted.height) != (truth.width, truth.height) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            predicted.width, predicted.height, truth.width, truth.height
        )));
    }
    let mut r = IoUResult::default();
    for (&a, &b) in predicted.labels.iter().zip(&truth.labels) {
        let (a, b) = (a == class, b == class);
        r.intersection += (a && b) as u64;
        r.union += (a || b) as u64;
        r.predicted += a as u64;
        r.truth += b as u64;
    }
    Ok(r)
}

/// mIoU over the images with a nonempty union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanIoU {
    Mean {
        value: f64,
        images: usize,
    },
    /// Every image was a true negative.
    Empty,
}

impl MeanIoU {
    pub fn value(&self) -> Option<f64> {
        match self {
            MeanIoU::Mean { value, .. } => Some(*value),
            MeanIoU::Empty => None,
        }
    }
}

pub fn miou(results: &[IoUResult]) -> MeanIoU {
    let defined: Vec<f64> = results.iter().filter_map(IoUResult::value).collect();
    if defined.is_empty() {
        return MeanIoU::Empty;
    }
    MeanIoU::Mean {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        images: defined.len(),
    }
}

/// IoU threshold as an exact ratio `num / den` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threshold {
    num: u64,
    den: u64,
}

impl Threshold {
    pub fn ratio(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num > den {
            return Err(Error::InvalidArgument(format!(
                "threshold {num}/{den} outside (0, 1]"
            )));
        }
        Ok(Threshold { num, den })
    }

    pub fn percent(p: u32) -> Result<Self> {
        Threshold::ratio(p as u64, 100)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `intersection / union >= num / den`, in integers.
    fn reached_by(&self, r: &IoUResult) -> bool {
        r.intersection as u128 * self.den as u128 >= self.num as u128 * r.union as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

pub fn classify_outcome(r: &IoUResult, tau: Threshold) -> Outcome {
    if r.union == 0 {
        Outcome::TrueNegative
    } else if r.predicted == 0 {
        // union > 0 with nothing predicted: IoU 0 against nonempty ground truth
        Outcome::FalseNegative
    } else if tau.reached_by(r) {
        Outcome::TruePositive
    } else {
        Outcome::FalsePositive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::TruePositive => self.tp += 1,
            Outcome::TrueNegative => self.tn += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::FalseNegative => self.fn_ += 1,
        }
    }

    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a Outcome>) -> Self {
        let mut c = OutcomeCounts::default();
        outcomes.into_iter().for_each(|&o| c.add(o));
        c
    }

    pub fn at(results: &[IoUResult], tau: Threshold) -> Self {
        let mut c = OutcomeCounts::default();
        for r in results {
            c.add(classify_outcome(r, tau));
        }
        c
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

pub fn precision_at(outcomes: &[Outcome]) -> Option<f64> {
    OutcomeCounts::from_outcomes(outcomes).precision()
}

pub fn recall_at(outcomes: &[Outcome]) -> Option<f64> {
    OutcomeCounts::from_outcomes(outcomes).recall()
}

/// `start:step:end` in integer percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdRange {
    pub start: u32,
    pub step: u32,
    pub end: u32,
}

impl ThresholdRange {
    pub fn new(start: u32, step: u32, end: u32) -> Result<Self> {
        if step == 0 || start > end || (end - start) % step != 0 || start == 0 || end > 100 {
            return Err(Error::InvalidArgument(format!(
                "invalid threshold range {start}:{step}:{end}"
            )));
        }
        Ok(ThresholdRange { start, step, end })
    }

    pub fn thresholds(&self) -> impl Iterator<Item = Threshold> + '_ {
        (self.start..=self.end)
            .step_by(self.step as usize)
            .map(|p| Threshold::percent(p).expect("validated range"))
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl FromStr for ThresholdRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let nums: Option<Vec<u32>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[a, b, c]) => ThresholdRange::new(a, b, c),
            _ => Err(Error::InvalidArgument(format!(
                "threshold range `{s}` is not start:step:end"
            ))),
        }
    }
}

impl fmt::Display for ThresholdRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.step, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMetric {
    Precision,
    Recall,
}

impl RateMetric {
    pub fn at(&self, results: &[IoUResult], tau: Threshold) -> Option<f64> {
        let c = OutcomeCounts::at(results, tau);
        match self {
            RateMetric::Precision => c.precision(),
            RateMetric::Recall => c.recall(),
        }
    }
}

/// Mean of a metric over a threshold range. Thresholds where the metric is
/// undefined are skipped and counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub value: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

pub fn averaged_metric(
    metric: RateMetric,
    results: &[IoUResult],
    range: ThresholdRange,
) -> Averaged {
    let mut sum = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for tau in range.thresholds() {
        match metric.at(results, tau) {
            Some(v) => {
                sum += v;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    Averaged {
        value: (evaluated > 0).then(|| sum / evaluated as f64),
        evaluated,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: u32, y0: u32, side: u32, w: u32) -> Bitmap {
        Bitmap::from_fn(w, w, |i| {
            let (x, y) = (i as u32 % w, i as u32 / w);
            x >= x0 && x < x0 + side && y >= y0 && y < y0 + side
        })
    }

    #[test]
    fn iou_examples() {
        let a = square(0, 0, 2, 4);
        assert_eq!(
            iou(&MaskPair::new(a.clone(), a.clone()).unwrap()).value(),
            Some(1.0)
        );
        let r = iou(&MaskPair::new(a, square(1, 1, 2, 4)).unwrap());
        assert_eq!((r.intersection, r.union), (1, 7));
        let empty = Bitmap::new(4, 4);
        assert_eq!(
            iou(&MaskPair::new(empty.clone(), empty).unwrap()).value(),
            None
        );
        assert!(MaskPair::new(Bitmap::new(4, 4), Bitmap::new(4, 5)).is_err());
    }

    fn res(i: u64, u: u64, p: u64, g: u64) -> IoUResult {
        IoUResult {
            intersection: i,
            union: u,
            predicted: p,
            truth: g,
        }
    }

    #[test]
    fn miou_excludes_true_negatives() {
        let rs = [res(4, 4, 4, 4), res(2, 4, 3, 3), res(0, 0, 0, 0)];
        assert_eq!(
            miou(&rs),
            MeanIoU::Mean {
                value: 0.75,
                images: 2
            }
        );
        assert_eq!(miou(&rs[..1]).value(), Some(1.0));
        assert_eq!(miou(&[res(0, 0, 0, 0); 3]), MeanIoU::Empty);
    }

    #[test]
    fn outcome_examples() {
        let t60 = Threshold::percent(60).unwrap();
        assert_eq!(
            classify_outcome(&res(86, 100, 90, 96), t60),
            Outcome::TruePositive
        );
        assert_eq!(
            classify_outcome(&res(23, 100, 30, 93), t60),
            Outcome::FalsePositive
        );
        assert_eq!(
            classify_outcome(&res(0, 5, 0, 5), t60),
            Outcome::FalseNegative
        );
        assert_eq!(
            classify_outcome(&res(0, 5, 5, 0), t60),
            Outcome::FalsePositive
        );
        assert_eq!(
            classify_outcome(&res(0, 0, 0, 0), t60),
            Outcome::TrueNegative
        );
        // exactly at the threshold
        assert_eq!(
            classify_outcome(&res(60, 100, 60, 100), t60),
            Outcome::TruePositive
        );
    }

    #[test]
    fn precision_recall_examples() {
        use Outcome::*;
        let o = [
            TruePositive,
            TruePositive,
            TruePositive,
            FalsePositive,
            FalseNegative,
            TrueNegative,
        ];
        assert_eq!(precision_at(&o), Some(0.75));
        assert_eq!(recall_at(&o), Some(0.75));
        assert_eq!(precision_at(&[TrueNegative; 3]), None);
        assert_eq!(recall_at(&[TrueNegative; 3]), None);
    }

    #[test]
    fn ranges() {
        let r: ThresholdRange = "50:5:95".parse().unwrap();
        assert_eq!(r.thresholds().count(), 10);
        assert_eq!(r.len(), 10);
        assert!("50:7:95".parse::<ThresholdRange>().is_err());
        assert!("95:5:50".parse::<ThresholdRange>().is_err());
        assert!("50:0:50".parse::<ThresholdRange>().is_err());
    }

    #[test]
    fn averaged_precision_matches_hand_sum() {
        // IoUs 0.55, 0.72, 0.91 plus one FN and one TN
        let rs = [
            res(55, 100, 60, 95),
            res(72, 100, 80, 92),
            res(91, 100, 95, 96),
            res(0, 10, 0, 10),
            res(0, 0, 0, 0),
        ];
        let range = ThresholdRange::new(50, 5, 95).unwrap();
        // thresholds 50..95: TP counts 3,3,2,2,2,1,1,1,1,0 out of 3 predictions
        let hand = (3.0 + 3.0 + 2.0 + 2.0 + 2.0 + 1.0 + 1.0 + 1.0 + 1.0 + 0.0) / 3.0 / 10.0;
        let avg = averaged_metric(RateMetric::Precision, &rs, range);
        assert!((avg.value.unwrap() - hand).abs() < 1e-12);
        assert_eq!(avg.skipped, 0);

        let tn_only = [res(0, 0, 0, 0)];
        let avg = averaged_metric(RateMetric::Precision, &tn_only, range);
        assert_eq!(avg.value, None);
        assert_eq!(avg.skipped, 10);
    }

    #[test]
    fn constant_metric_average() {
        // a perfect page is a TP at every threshold
        let rs = [res(100, 100, 100, 100)];
        let avg = averaged_metric(
            RateMetric::Precision,
            &rs,
            ThresholdRange::new(50, 5, 95).unwrap(),
        );
        assert_eq!(avg.value, Some(1.0));
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_monotone(p in proptest::collection::vec(any::<bool>(), 64), g in proptest::collection::vec(any::<bool>(), 64), pick in 0usize..64) {
            let pb = Bitmap::from_fn(8, 8, |i| p[i]);
            let gb = Bitmap::from_fn(8, 8, |i| g[i]);
            let a = iou(&MaskPair::new(pb.clone(), gb.clone()).unwrap());
            let b = iou(&MaskPair::new(gb.clone(), pb.clone()).unwrap());
            prop_assert_eq!(a.intersection, b.intersection);
            prop_assert_eq!(a.union, b.union);
            if a.union > 0 && a.value() == Some(1.0) {
                prop_assert_eq!(&pb, &gb);
            }
            if g[pick] && !p[pick] {
                let mut grown = pb.clone();
                grown.set(pick, true);
                let c = iou(&MaskPair::new(grown, gb).unwrap());
                // (i+1)/u >= i/u, union unchanged
                prop_assert!((c.intersection as u128) * (a.union as u128) >= (a.intersection as u128) * (c.union as u128));
            }
        }

        #[test]
        fn true_positives_non_increasing_in_tau(rs in proptest::collection::vec((0u64..20, 0u64..20, 0u64..20), 1..30)) {
            let results: Vec<IoUResult> = rs.iter().map(|&(a, b, c)| {
                let inter = a.min(b);
                let p = a.max(inter);
                let g = b.max(inter) + c % 2;
                res(inter, p + g - inter, p, g)
            }).collect();
            let mut last_tp = u64::MAX;
            let mut last_recall = f64::INFINITY;
            for pct in 1..=100 {
                let c = OutcomeCounts::at(&results, Threshold::percent(pct).unwrap());
                prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, results.len() as u64);
                prop_assert!(c.tp <= last_tp);
                last_tp = c.tp;
                if let Some(r) = c.recall() {
                    prop_assert!(r <= last_recall + 1e-15);
                    last_recall = r;
                }
            }
        }
    }
}
