//! Confusion matrices, per-class precision/recall/F1 and threshold-swept
//! one-vs-rest ROC curves with micro and macro averaging.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::argmax;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[i][j]`: samples of true class `i` predicted as `j`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn with_classes(mut self, classes: &[&str]) -> Result<Self> {
        if classes.len() != self.k() {
            return Err(Error::InvalidInput(format!(
                "{} class names for a {}-class matrix",
                classes.len(),
                self.k()
            )));
        }
        self.classes = classes.iter().map(|c| c.to_string()).collect();
        Ok(self)
    }
}

/// Tally predictions against labels. Classes are named by index until
/// [`ConfusionMatrix::with_classes`] is applied.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(Error::Label(format!("class index {} out of range for {k} classes", p.max(l))));
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: (0..k).map(|i| i.to_string()).collect(),
        counts,
    })
}

/// Row percentages rounded to one decimal.
///
/// Rounding uses the largest-remainder method on tenths of a percent, so
/// every row sums to exactly 100.0; remainder ties go to the lower column.
pub fn row_percent(matrix: &ConfusionMatrix) -> Result<Vec<Vec<f64>>> {
    matrix
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::UndefinedRow(matrix.classes[i].clone()));
            }
            let scaled: Vec<u64> = row.iter().map(|&c| c * 1000).collect();
            let mut tenths: Vec<u64> = scaled.iter().map(|&s| s / total).collect();
            let short = 1000 - tenths.iter().sum::<u64>();
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| (scaled[b] % total).cmp(&(scaled[a] % total)).then(a.cmp(&b)));
            for &j in order.iter().take(short as usize) {
                tenths[j] += 1;
            }
            Ok(tenths.into_iter().map(|t| t as f64 / 10.0).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub per_class: Vec<ClassScores>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (0 where a denominator is 0) and
/// overall accuracy.
pub fn precision_recall_f1(matrix: &ConfusionMatrix) -> Result<Summary> {
    let k = matrix.k();
    if k < 2 || matrix.total() == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = matrix.counts[c][c];
            let precision = ratio(tp, matrix.col_sum(c));
            let recall = ratio(tp, matrix.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                class: matrix.classes[c].clone(),
                precision,
                recall,
                f1,
                support: matrix.row_sum(c),
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    Ok(Summary {
        accuracy: ratio(matrix.trace(), matrix.total()),
        macro_f1,
        per_class,
    })
}

/// `{0.00, 0.01, …, 1.00}`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else {
        s.serialize_str(if *t > 0.0 { "inf" } else { "-inf" })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub name: String,
    /// False when the class has no positives or no negatives.
    pub defined: bool,
    /// Sorted by ascending threshold; empty when undefined.
    pub points: Vec<RocPoint>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub classes: Vec<Curve>,
    pub micro: Curve,
    #[serde(rename = "macro")]
    pub macro_avg: Curve,
}

fn curve(name: &str, points: Vec<RocPoint>) -> Result<Curve> {
    let xy: Vec<(f64, f64)> = points.iter().rev().map(|p| (p.fpr, p.tpr)).collect();
    Ok(Curve {
        name: name.to_string(),
        defined: true,
        auc: Some(auc(&xy)?),
        points,
    })
}

/// One-vs-rest ROC sweep of softmax scores `[N, K]`.
///
/// At threshold τ a sample is positive for class `c` when its class-`c`
/// score is ≥ τ. A `+inf` threshold is always appended so every curve
/// reaches (0, 0); `-inf` is prepended when the grid does not start at or
/// below 0. Micro pools the counts of every class; macro is the mean of the
/// defined classes' rates at each threshold.
pub fn roc_sweep<T: Scalar>(scores: &Tensor<T>, labels: &[usize], thresholds: &[f64], classes: &[&str]) -> Result<RocCurve> {
    let (n, k) = match *scores.shape() {
        [n, k] if n > 0 && k >= 2 => (n, k),
        _ => return Err(Error::Shape(format!("scores must be [N, K] with K ≥ 2, got {:?}", scores.shape()))),
    };
    if labels.len() != n || classes.len() != k {
        return Err(Error::InvalidInput(format!(
            "{n} score rows, {} labels, {k} columns, {} class names",
            labels.len(),
            classes.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} out of range for {k} classes")));
    }
    let s: Vec<f64> = scores.data().iter().map(|v| v.as_f64()).collect();
    for i in 0..n {
        let total: f64 = s[i * k..(i + 1) * k].iter().sum();
        if !((total - 1.0).abs() <= 1e-5) {
            return Err(Error::InvalidInput(format!("score row {i} sums to {total}, expected 1")));
        }
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::InvalidInput("thresholds must be non-empty and strictly increasing".into()));
    }
    let mut grid = Vec::with_capacity(thresholds.len() + 2);
    if thresholds[0] > 0.0 {
        grid.push(f64::NEG_INFINITY);
    }
    grid.extend_from_slice(thresholds);
    if *grid.last().expect("non-empty") != f64::INFINITY {
        grid.push(f64::INFINITY);
    }

    let positives: Vec<u64> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count() as u64).collect();
    // counts[c][t] = (tp, fp)
    let counts: Vec<Vec<(u64, u64)>> = (0..k)
        .map(|c| {
            grid.iter()
                .map(|&tau| {
                    let mut tp = 0;
                    let mut fp = 0;
                    for (i, &l) in labels.iter().enumerate() {
                        if s[i * k + c] >= tau {
                            if l == c {
                                tp += 1;
                            } else {
                                fp += 1;
                            }
                        }
                    }
                    (tp, fp)
                })
                .collect()
        })
        .collect();

    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let pos = positives[c];
        let neg = n as u64 - pos;
        if pos == 0 || neg == 0 {
            log::warn!(
                "ROC for class '{}' is undefined ({} positives, {} negatives); excluded from the macro average",
                classes[c],
                pos,
                neg
            );
            per_class.push(Curve {
                name: classes[c].to_string(),
                defined: false,
                points: Vec::new(),
                auc: None,
            });
            continue;
        }
        let points = grid
            .iter()
            .zip(&counts[c])
            .map(|(&threshold, &(tp, fp))| RocPoint {
                threshold,
                fpr: ratio(fp, neg),
                tpr: ratio(tp, pos),
            })
            .collect();
        per_class.push(curve(classes[c], points)?);
    }

    let micro_pos = n as u64;
    let micro_neg = (n * (k - 1)) as u64;
    let micro_points = grid
        .iter()
        .enumerate()
        .map(|(t, &threshold)| {
            let (tp, fp) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c[t].0, acc.1 + c[t].1));
            RocPoint {
                threshold,
                fpr: ratio(fp, micro_neg),
                tpr: ratio(tp, micro_pos),
            }
        })
        .collect();
    let micro = curve("micro", micro_points)?;

    let defined: Vec<&Curve> = per_class.iter().filter(|c| c.defined).collect();
    let macro_avg = if defined.is_empty() {
        Curve {
            name: "macro".into(),
            defined: false,
            points: Vec::new(),
            auc: None,
        }
    } else {
        let m = defined.len() as f64;
        let points = grid
            .iter()
            .enumerate()
            .map(|(t, &threshold)| RocPoint {
                threshold,
                fpr: defined.iter().map(|c| c.points[t].fpr).sum::<f64>() / m,
                tpr: defined.iter().map(|c| c.points[t].tpr).sum::<f64>() / m,
            })
            .collect();
        curve("macro", points)?
    };
    Ok(RocCurve {
        classes: per_class,
        micro,
        macro_avg,
    })
}

/// Trapezoidal area under `(fpr, tpr)` points sorted by FPR, ties by TPR.
pub fn auc(points: &[(f64, f64)]) -> Result<f64> {
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 < x0 || (x1 == x0 && y1 < y0) {
            return Err(Error::InvalidInput(format!(
                "ROC points must be sorted by FPR then TPR; ({x0}, {y0}) precedes ({x1}, {y1})"
            )));
        }
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Everything reported for one scored sample set.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
    /// `None` when some class has no samples.
    pub row_percent: Option<Vec<Vec<f64>>>,
    pub roc_auc: AucSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct AucSummary {
    pub per_class: Vec<(String, Option<f64>)>,
    pub micro: Option<f64>,
    #[serde(rename = "macro")]
    pub macro_avg: Option<f64>,
}

/// Arg-max predictions of score rows.
pub fn predictions<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    let k = scores.shape()[1];
    scores.data().chunks(k).map(argmax).collect()
}

pub fn evaluate_scores<T: Scalar>(scores: &Tensor<T>, labels: &[usize], classes: &[&str]) -> Result<(Evaluation, RocCurve)> {
    let k = classes.len();
    let confusion = confusion_matrix(&predictions(scores), labels, k)?.with_classes(classes)?;
    let summary = precision_recall_f1(&confusion)?;
    let row_percent = match row_percent(&confusion) {
        Ok(r) => Some(r),
        Err(Error::UndefinedRow(c)) => {
            log::warn!("class '{c}' has no samples; row percentages omitted");
            None
        }
        Err(e) => return Err(e),
    };
    let roc = roc_sweep(scores, labels, &default_thresholds(), classes)?;
    let roc_auc = AucSummary {
        per_class: roc.classes.iter().map(|c| (c.name.clone(), c.auc)).collect(),
        micro: roc.micro.auc,
        macro_avg: roc.macro_avg.auc,
    };
    Ok((
        Evaluation {
            n: labels.len(),
            accuracy: summary.accuracy,
            macro_f1: summary.macro_f1,
            per_class: summary.per_class,
            confusion,
            row_percent,
            roc_auc,
        },
        roc,
    ))
}

/// Row-percent table as CSV: one row per true class led by its name, then a
/// row of predicted-class names.
pub fn confusion_csv(matrix: &ConfusionMatrix) -> Result<String> {
    let pct = row_percent(matrix)?;
    let mut out = String::new();
    for (name, row) in matrix.classes.iter().zip(&pct) {
        out.push_str(name);
        for v in row {
            write!(out, ",{v:.1}").expect("string write");
        }
        out.push('\n');
    }
    for name in &matrix.classes {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    Ok(out)
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t}")
    }
}

/// `class,threshold,fpr,tpr` rows for every defined curve, then `micro`
/// and `macro`.
pub fn roc_csv(roc: &RocCurve) -> String {
    let mut out = String::from("class,threshold,fpr,tpr\n");
    for c in roc.classes.iter().chain([&roc.micro, &roc.macro_avg]) {
        for p in &c.points {
            writeln!(out, "{},{},{},{}", c.name, fmt_threshold(p.threshold), p.fpr, p.tpr).expect("string write");
        }
    }
    out
}

pub fn write_confusion_csv(path: &Path, matrix: &ConfusionMatrix) -> Result<()> {
    write_atomic(path, confusion_csv(matrix)?.as_bytes())
}

pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    write_atomic(path, roc_csv(roc).as_bytes())
}
