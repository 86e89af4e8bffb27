//! Segmentation metrics, label-quality audits and run reports.
//!
//! `emit_report` writes into the output directory:
//!
//! - `metrics.json`: see [`MetricsReport`]
//! - `curves.csv`: `sample_id,epoch,miou,fitted` (fitted empty before the
//!   first fit)
//! - `plots/<sample_id>.svg`: training mIoU, fitted curve and trigger epoch

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvefit::{eval_curve, LearningCurve};
use crate::scene::UNLABELED;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {gt} ground-truth labels, {pred} predictions")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u16, num_classes: usize },
    #[error("metric undefined: no class has ground truth or predictions")]
    Undefined,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `K x K` counts, rows ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
    /// Points whose ground truth is unlabeled.
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
            ignored: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Add another sample's tally.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        self.ignored += other.ignored;
    }

    /// Tally one more `(gt, pred)` pair set.
    pub fn accumulate(&mut self, gt: &[u16], pred: &[u16]) -> Result<(), EvalError> {
        if gt.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                gt: gt.len(),
                pred: pred.len(),
            });
        }
        let k = self.num_classes;
        for (&g, &p) in gt.iter().zip(pred) {
            if g == UNLABELED {
                self.ignored += 1;
                continue;
            }
            for label in [g, p] {
                if label as usize >= k {
                    return Err(EvalError::LabelOutOfRange {
                        label,
                        num_classes: k,
                    });
                }
            }
            self.counts[g as usize][p as usize] += 1;
        }
        Ok(())
    }
}

/// Confusion matrix of `pred` against `gt`. Unlabeled ground truth is
/// counted in `ignored`.
pub fn confusion(gt: &[u16], pred: &[u16], num_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.accumulate(gt, pred)?;
    Ok(cm)
}

/// Mean IoU over classes with non-zero union, and per-class IoU (`None`
/// for zero-union classes).
pub fn miou(cm: &ConfusionMatrix) -> Result<(f64, Vec<Option<f64>>), EvalError> {
    let k = cm.num_classes;
    let per: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let gt: u64 = cm.counts[c].iter().sum();
            let pred: u64 = cm.counts.iter().map(|r| r[c]).sum();
            let union = gt + pred - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(EvalError::Undefined);
    }
    Ok((present.iter().sum::<f64>() / present.len() as f64, per))
}

/// Mean per-class recall over classes with ground-truth points.
pub fn macc(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let recalls: Vec<f64> = (0..cm.num_classes)
        .filter_map(|c| {
            let gt: u64 = cm.counts[c].iter().sum();
            (gt > 0).then(|| cm.counts[c][c] as f64 / gt as f64)
        })
        .collect();
    if recalls.is_empty() {
        return Err(EvalError::Undefined);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Fraction of points with labeled ground truth whose label matches it.
/// Unlabeled entries in `labels` count as wrong.
pub fn label_accuracy(clean: &[u16], labels: &[u16]) -> Result<(u64, u64), EvalError> {
    if clean.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            gt: clean.len(),
            pred: labels.len(),
        });
    }
    let mut correct = 0;
    let mut total = 0;
    for (&c, &l) in clean.iter().zip(labels) {
        if c != UNLABELED {
            total += 1;
            correct += u64::from(c == l);
        }
    }
    Ok((correct, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub noisy_accuracy: f64,
    pub refurbished_accuracy: f64,
    /// Refurbished minus noisy accuracy.
    pub delta: f64,
    pub points: u64,
}

impl LabelQuality {
    pub fn from_counts(noisy_correct: u64, refurbished_correct: u64, points: u64) -> Self {
        let frac = |c: u64| if points == 0 { 0.0 } else { c as f64 / points as f64 };
        let (noisy_accuracy, refurbished_accuracy) = (frac(noisy_correct), frac(refurbished_correct));
        Self {
            noisy_accuracy,
            refurbished_accuracy,
            delta: refurbished_accuracy - noisy_accuracy,
            points,
        }
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub macc: f64,
    pub class_names: Vec<String>,
    /// `null` for classes absent from both ground truth and predictions.
    pub per_class_iou: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub label_quality: Option<LabelQuality>,
    pub num_samples: usize,
    pub corrected_samples: usize,
}

impl MetricsReport {
    pub fn new(
        cm: ConfusionMatrix,
        class_names: Vec<String>,
        label_quality: Option<LabelQuality>,
        curves: &[LearningCurve],
        num_samples: usize,
    ) -> Result<Self, EvalError> {
        let (miou, per_class_iou) = miou(&cm)?;
        Ok(Self {
            miou,
            macc: macc(&cm)?,
            class_names,
            per_class_iou,
            confusion: cm,
            label_quality,
            num_samples,
            corrected_samples: curves.iter().filter(|c| c.corrected).count(),
        })
    }
}

/// Pixel layout of learning-curve plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFrame {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub epochs: usize,
    pub stroke: f64,
}

impl PlotFrame {
    pub fn new(epochs: usize) -> Self {
        Self {
            width: 480.0,
            height: 320.0,
            margin: 40.0,
            epochs: epochs.max(2),
            stroke: 2.0,
        }
    }

    pub fn x(&self, epoch: f64) -> f64 {
        let span = (self.epochs - 1) as f64;
        self.margin + (epoch - 1.0) / span * (self.width - 2.0 * self.margin)
    }

    /// mIoU in `[0, 1]` to pixel row.
    pub fn y(&self, value: f64) -> f64 {
        self.height - self.margin - value.clamp(0.0, 1.0) * (self.height - 2.0 * self.margin)
    }
}

/// Samples per epoch along the fitted curve.
pub const FIT_SAMPLES_PER_EPOCH: usize = 4;

/// Learning-curve plot for one sample as a standalone SVG document.
pub fn curve_svg(curve: &LearningCurve) -> String {
    let n = curve.miou_series.len();
    let f = PlotFrame::new(n);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = f.width,
        h = f.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (f.x(1.0), f.x(f.epochs as f64), f.y(0.0), f.y(1.0));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">epoch</text>"#,
        (x0 + x1) / 2.0,
        f.height - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" font-size="12" transform="rotate(-90 12 {:.2})" text-anchor="middle">training mIoU</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" font-size="12" text-anchor="middle">{}</text>"#,
        f.width / 2.0,
        xml_escape(&curve.sample_id)
    );
    let observed: Vec<String> = curve
        .miou_series
        .iter()
        .enumerate()
        .map(|(i, &m)| format!("{:.2},{:.2}", f.x((i + 1) as f64), f.y(m)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline id="observed" points="{}" stroke="steelblue" stroke-width="{}" fill="none"/>"#,
        observed.join(" "),
        f.stroke
    );
    if let Some(p) = &curve.fit {
        let steps = (f.epochs - 1) * FIT_SAMPLES_PER_EPOCH;
        let fitted: Vec<String> = (0..=steps)
            .map(|i| {
                let t = 1.0 + i as f64 / FIT_SAMPLES_PER_EPOCH as f64;
                format!("{:.2},{:.2}", f.x(t), f.y(eval_curve(p, t)))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="fitted" points="{}" stroke="darkorange" stroke-width="{}" stroke-dasharray="6 3" fill="none"/>"#,
            fitted.join(" "),
            f.stroke
        );
    }
    if let Some(t) = curve.t_c {
        let x = f.x(t as f64);
        let _ = writeln!(
            s,
            r#"<line id="trigger" x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}" stroke="crimson" stroke-width="1"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Long-format CSV of all curves.
pub fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut s = String::from("sample_id,epoch,miou,fitted\n");
    for c in curves {
        for (i, &m) in c.miou_series.iter().enumerate() {
            let t = i + 1;
            let fitted = c
                .fit
                .map(|p| format!("{:.6}", eval_curve(&p, t as f64)))
                .unwrap_or_default();
            let _ = writeln!(s, "{},{t},{m:.6},{fitted}", c.sample_id);
        }
    }
    s
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub curves: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Write `metrics.json`, `curves.csv` and one SVG per curve into `out`.
pub fn emit_report(
    out: &Path,
    metrics: &MetricsReport,
    curves: &[LearningCurve],
) -> Result<ReportFiles, EvalError> {
    let plot_dir = out.join("plots");
    fs::create_dir_all(&plot_dir).map_err(io_err(&plot_dir))?;
    let metrics_path = out.join("metrics.json");
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(&metrics_path, json + "\n").map_err(io_err(&metrics_path))?;
    let curves_path = out.join("curves.csv");
    fs::write(&curves_path, curves_csv(curves)).map_err(io_err(&curves_path))?;
    let mut plots = Vec::with_capacity(curves.len());
    for c in curves {
        let p = plot_dir.join(format!("{}.svg", c.sample_id));
        fs::write(&p, curve_svg(c)).map_err(io_err(&p))?;
        plots.push(p);
    }
    Ok(ReportFiles {
        metrics: metrics_path,
        curves: curves_path,
        plots,
    })
}
