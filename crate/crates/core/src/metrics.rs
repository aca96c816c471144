//! Confusion-matrix scoring: global accuracy, class-average accuracy
//! (mean per-class recall) and mean IoU.

use crate::dataio::{LabelMap, LabelTensor, CLASS_NAMES, IGNORE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use std::fmt::Write as _;

/// Table cell for a class whose IoU is undefined.
pub const UNDEFINED_CELL: &str = "-";

/// `k x k` counts, rows ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    /// Adds one pixel pair per position; ignored ground truth is skipped.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.width, gt.height) != (pred.width, pred.height) {
            return Err(Error::dim(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.width, gt.height, pred.width, pred.height
            )));
        }
        self.accumulate_ids(&gt.ids, &pred.ids)
    }

    pub fn accumulate_ids(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::dim(format!("{} ground-truth vs {} predicted pixels", gt.len(), pred.len())));
        }
        let k = self.k;
        if let Some(&p) = pred.iter().find(|&&p| p as usize >= k) {
            return Err(Error::Parameter(format!("prediction {p} outside 0..{k}")));
        }
        if let Some(&g) = gt.iter().find(|&&g| g != IGNORE && g as usize >= k) {
            return Err(Error::Parameter(format!("ground truth {g} outside 0..{k}")));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g != IGNORE {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim(format!("merging {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Treatment of classes with no ground-truth pixels (class average) or with
/// an empty union (IoU).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AbsentClasses {
    #[default]
    Exclude,
    Zero,
}

impl std::str::FromStr for AbsentClasses {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(Self::Exclude),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!("metrics.absent must be exclude or zero, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub global_acc: f64,
    pub class_avg_acc: f64,
    pub mean_iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub scored_pixels: u64,
}

fn mean_of(values: &[Option<f64>], absent: AbsentClasses) -> f64 {
    let picked: Vec<f64> = match absent {
        AbsentClasses::Exclude => values.iter().flatten().copied().collect(),
        AbsentClasses::Zero => values.iter().map(|v| v.unwrap_or(0.0)).collect(),
    };
    if picked.is_empty() {
        return 0.0;
    }
    picked.iter().sum::<f64>() / picked.len() as f64
}

pub fn report(cm: &ConfusionMatrix, absent: AbsentClasses) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("no scored pixels; metrics are undefined".into()));
    }
    let k = cm.classes();
    let trace: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    let mut iou = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    for c in 0..k {
        let (tp, row, col) = (cm.get(c, c), cm.row_sum(c), cm.col_sum(c));
        let union = row + col - tp;
        iou.push((union > 0).then(|| tp as f64 / union as f64));
        recall.push((row > 0).then(|| tp as f64 / row as f64));
    }
    Ok(MetricReport {
        global_acc: trace as f64 / total as f64,
        class_avg_acc: mean_of(&recall, absent),
        mean_iou: mean_of(&iou, absent),
        per_class_iou: iou,
        per_class_recall: recall,
        scored_pixels: total,
    })
}

/// Percentage with one decimal, halves rounded up.
pub fn format_percent(v: f64) -> String {
    // the epsilon absorbs binary representation error just below a half
    let tenths = (v * 1000.0 + 0.5 + 1e-9).floor();
    format!("{:.1}", tenths / 10.0)
}

fn class_name(c: usize, k: usize) -> String {
    if k == NUM_CLASSES {
        CLASS_NAMES[c].to_string()
    } else {
        format!("class {c}")
    }
}

/// One `(class name, IoU %)` row per class in class-index order.
pub fn per_class_table(report: &MetricReport) -> Vec<(String, String)> {
    let k = report.per_class_iou.len();
    report
        .per_class_iou
        .iter()
        .enumerate()
        .map(|(c, v)| (class_name(c, k), v.map_or_else(|| UNDEFINED_CELL.to_string(), format_percent)))
        .collect()
}

pub fn format_text(report: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scored pixels  {}", report.scored_pixels);
    let _ = writeln!(s, "global acc     {}", format_percent(report.global_acc));
    let _ = writeln!(s, "class avg acc  {}", format_percent(report.class_avg_acc));
    let _ = writeln!(s, "mean IoU       {}", format_percent(report.mean_iou));
    let rows = per_class_table(report);
    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0);
    for (name, cell) in rows {
        let _ = writeln!(s, "  {name:<width$}  {cell:>5}");
    }
    s
}

pub const CSV_HEADER: &str = "scope,name,value";

/// Summary rows as fractions, class rows as IoU percentages (empty when undefined).
pub fn format_csv(report: &MetricReport) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    let _ = writeln!(s, "summary,global_acc,{}", report.global_acc);
    let _ = writeln!(s, "summary,class_avg_acc,{}", report.class_avg_acc);
    let _ = writeln!(s, "summary,mean_iou,{}", report.mean_iou);
    let _ = writeln!(s, "summary,scored_pixels,{}", report.scored_pixels);
    let k = report.per_class_iou.len();
    for (c, v) in report.per_class_iou.iter().enumerate() {
        let _ = writeln!(s, "class,{},{}", class_name(c, k), v.map(format_percent).unwrap_or_default());
    }
    s
}

/// Per-pixel argmax over the channel axis of `[N, K, H, W]` logits; ties go
/// to the lowest class index.
pub fn argmax_predictions<T: Real>(logits: &Tensor<T>) -> Result<LabelTensor> {
    let [n, k, h, w] = logits.dims4()?;
    if k > IGNORE as usize {
        return Err(Error::dim(format!("{k} classes do not fit a label map")));
    }
    let hw = h * w;
    let x = logits.data();
    let mut ids = Vec::with_capacity(n * hw);
    for b in 0..n {
        for px in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if x[(b * k + c) * hw + px] > x[(b * k + best) * hw + px] {
                    best = c;
                }
            }
            ids.push(best as u8);
        }
    }
    Ok(LabelTensor {
        n,
        height: h,
        width: w,
        ids,
    })
}
