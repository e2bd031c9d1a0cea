//! Top-k accuracy, the row-normalized confusion matrix and report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{eval_indices, SamplingConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::ClipSet;

/// Side of the square confusion heatmap in pixels.
pub const HEATMAP_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub top1: f64,
    /// Top-k with k clamped to the number of classes.
    pub top5: f64,
    pub per_class: Vec<f64>,
    /// Rows are true labels, columns predictions; each row sums to 1 or is
    /// all zero when the class has no samples.
    pub confusion: Vec<Vec<f64>>,
    pub samples: usize,
    pub classes: Vec<String>,
}

fn check_range(what: &str, values: &[usize], n: usize) -> Result<()> {
    match values.iter().position(|&v| v >= n) {
        Some(i) => Err(Error::Input(format!(
            "{what}[{i}] = {} out of range for {n} classes",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Raw counts: `counts[label][pred]`.
pub fn confusion_counts(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_range("labels", labels, num_classes)?;
    check_range("preds", preds, num_classes)?;
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        counts[l][p] += 1;
    }
    Ok(counts)
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<f64>>> {
    let counts = confusion_counts(preds, labels, num_classes)?;
    Ok(counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect())
}

/// Class indices ordered by descending score; ties keep the lower index first.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Metrics from per-clip score vectors.
pub fn metrics_from_scores(scores: &[Tensor], labels: &[usize], classes: &[String]) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::Usage("nothing to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} score vectors for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n = classes.len();
    if let Some(s) = scores.iter().find(|s| s.len() != n) {
        return Err(Error::Input(format!(
            "score vector of length {} for {n} classes",
            s.len()
        )));
    }
    let k = 5.min(n);
    let mut preds = Vec::with_capacity(scores.len());
    let mut top5_hits = 0usize;
    for (s, &l) in scores.iter().zip(labels) {
        let r = ranking(s.data());
        preds.push(r[0]);
        top5_hits += r[..k].contains(&l) as usize;
    }
    let confusion = confusion_matrix(&preds, labels, n)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let per_class = (0..n).map(|c| confusion[c][c]).collect();
    Ok(Metrics {
        top1: hits as f64 / labels.len() as f64,
        top5: top5_hits as f64 / labels.len() as f64,
        per_class,
        confusion,
        samples: labels.len(),
        classes: classes.to_vec(),
    })
}

/// One deterministic prediction per clip.
pub fn evaluate(
    model: &Model,
    params: &ParamStore,
    data: &ClipSet,
    sampling: SamplingConfig,
    classes: &[String],
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Usage("evaluation manifest is empty".into()));
    }
    let mut scores = Vec::with_capacity(data.len());
    for clip in &data.clips {
        let idx = eval_indices(clip.frames.len(), sampling.window, sampling.steps)?;
        let frames = clip.gather(&idx);
        scores.push(model.predict_clip(params, data.input(&frames))?.scores);
    }
    metrics_from_scores(&scores, &data.labels(), classes)
}

impl Metrics {
    /// Top-1 recomputed as the sample-weighted confusion diagonal.
    pub fn top1_from_confusion(&self, labels: &[usize]) -> f64 {
        let mut per = vec![0usize; self.classes.len()];
        for &l in labels {
            per[l] += 1;
        }
        let hits: f64 = (0..self.classes.len())
            .map(|c| self.confusion[c][c] * per[c] as f64)
            .sum();
        hits / labels.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = self.classes.join(",");
        s.push('\n');
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Binary PPM (P6), [`HEATMAP_SIZE`] pixels square, gray level
    /// `round(255·value)` per cell.
    pub fn confusion_ppm(&self) -> Vec<u8> {
        let n = self.confusion.len().max(1);
        let mut out = format!("P6\n{HEATMAP_SIZE} {HEATMAP_SIZE}\n255\n").into_bytes();
        for y in 0..HEATMAP_SIZE {
            let row = y * n / HEATMAP_SIZE;
            for x in 0..HEATMAP_SIZE {
                let col = x * n / HEATMAP_SIZE;
                let v = self.confusion.get(row).and_then(|r| r.get(col)).copied().unwrap_or(0.0);
                let g = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
                out.extend_from_slice(&[g, g, g]);
            }
        }
        out
    }
}

/// Writes `metrics.json`, `confusion.csv` and `confusion.ppm`.
pub fn emit_report(metrics: &Metrics, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = out_dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("metrics.json", metrics.to_json().as_bytes())?;
    write("confusion.csv", metrics.confusion_csv().as_bytes())?;
    write("confusion.ppm", &metrics.confusion_ppm())
}
