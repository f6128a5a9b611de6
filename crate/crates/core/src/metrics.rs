//! Confusion counts and the area/edge metric report.
//!
//! Counts are summed over every evaluated tile before any ratio is taken.
//! A ratio with a zero denominator is reported as 0 and listed in
//! `degenerate`.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{boundary_extract, BinaryMask};

/// Recorded in every report so readers know how tiles were combined.
pub const AGGREGATION: &str = "pooled counts over all evaluated pixels";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
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

    /// Prediction and ground truth exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
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

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Per-pixel tallies with "changed" as the positive class.
pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape(format!(
            "prediction {}×{} vs label {}×{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Metrics as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Rates plus the names of any metric whose denominator was zero.
pub fn rates(c: &ConfusionCounts) -> (Rates, Vec<&'static str>) {
    let mut degenerate = Vec::new();
    let mut ratio = |name, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name);
            0.0
        } else {
            num / den
        }
    };
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
    let iou = ratio("iou", tp, tp + fp + fn_);
    let oa = ratio("oa", tp + tn, tp + tn + fp + fn_);
    (
        Rates {
            oa,
            precision,
            recall,
            f1,
            iou,
        },
        degenerate,
    )
}

/// Area (or edge) metrics in percent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AreaMetrics {
    pub oa: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
    pub degenerate: Vec<String>,
}

pub fn area_metrics(c: &ConfusionCounts) -> AreaMetrics {
    let (r, degenerate) = rates(c);
    AreaMetrics {
        oa: 100.0 * r.oa,
        pre: 100.0 * r.precision,
        rec: 100.0 * r.recall,
        f1: 100.0 * r.f1,
        iou: 100.0 * r.iou,
        counts: *c,
        degenerate: degenerate.into_iter().map(str::to_owned).collect(),
    }
}

/// Confusion counts between the 1-pixel boundaries of two masks.
pub fn edge_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    confusion_counts(&boundary_extract(pred), &boundary_extract(gt))
}

pub fn edge_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<AreaMetrics> {
    Ok(area_metrics(&edge_counts(pred, gt)?))
}

/// Accumulates area and edge counts tile by tile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricAccumulator {
    pub area: ConfusionCounts,
    pub edge: ConfusionCounts,
    pub tiles: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
        self.area += confusion_counts(pred, gt)?;
        self.edge += edge_counts(pred, gt)?;
        self.tiles += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.area += other.area;
        self.edge += other.edge;
        self.tiles += other.tiles;
    }

    pub fn report(&self) -> MetricReport {
        MetricReport::from_counts(self.area, self.edge, self.tiles)
    }
}

/// Area metrics, edge metrics, counts and degenerate flags, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "OA")]
    pub oa: f64,
    #[serde(rename = "Pre")]
    pub pre: f64,
    #[serde(rename = "Rec")]
    pub rec: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "IOU")]
    pub iou: f64,
    #[serde(rename = "Pre_Edge")]
    pub pre_edge: f64,
    #[serde(rename = "Rec_Edge")]
    pub rec_edge: f64,
    #[serde(rename = "F1_Edge")]
    pub f1_edge: f64,
    #[serde(rename = "IOU_Edge")]
    pub iou_edge: f64,
    pub area_counts: ConfusionCounts,
    pub edge_counts: ConfusionCounts,
    pub degenerate: Vec<String>,
    pub tiles: usize,
    pub aggregation: String,
}

/// Column order of [`MetricReport::csv_row`].
pub const CSV_HEADER: &str = "OA,Pre,Rec,F1,IOU,Pre_Edge,Rec_Edge,F1_Edge,IOU_Edge,\
TP,TN,FP,FN,TP_Edge,TN_Edge,FP_Edge,FN_Edge,tiles,degenerate";

impl MetricReport {
    pub fn from_counts(area: ConfusionCounts, edge: ConfusionCounts, tiles: usize) -> Self {
        let a = area_metrics(&area);
        let e = area_metrics(&edge);
        let mut degenerate = a.degenerate.clone();
        degenerate.extend(
            e.degenerate
                .iter()
                .filter(|d| d.as_str() != "oa")
                .map(|d| format!("{d}_edge")),
        );
        Self {
            oa: a.oa,
            pre: a.pre,
            rec: a.rec,
            f1: a.f1,
            iou: a.iou,
            pre_edge: e.pre,
            rec_edge: e.rec,
            f1_edge: e.f1,
            iou_edge: e.iou,
            area_counts: area,
            edge_counts: edge,
            degenerate,
            tiles,
            aggregation: AGGREGATION.to_owned(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_row(&self) -> String {
        let (a, e) = (self.area_counts, self.edge_counts);
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{},{},{},{},{}",
            self.oa,
            self.pre,
            self.rec,
            self.f1,
            self.iou,
            self.pre_edge,
            self.rec_edge,
            self.f1_edge,
            self.iou_edge,
            a.tp,
            a.tn,
            a.fp,
            a.fn_,
            e.tp,
            e.tn,
            e.fp,
            e.fn_,
            self.tiles,
            self.degenerate.join(";")
        )
    }

    /// Header comment, header row and one data row.
    pub fn to_csv(&self) -> String {
        format!("# aggregation: {}\n{CSV_HEADER}\n{}\n", self.aggregation, self.csv_row())
    }
}
