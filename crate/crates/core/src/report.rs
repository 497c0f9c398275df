//! Side-by-side comparison of two checkpoints and panel rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::explain::{cams_for_samples, colorize, overlay, CamClass, OVERLAY_ALPHA};
use crate::imageio;
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::train::evaluate;

/// `exbl − unrefined` for every scalar field of the two reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_accuracy: Vec<f64>,
    pub mean_ar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub unrefined: EvalReport,
    pub exbl: EvalReport,
    pub deltas: Deltas,
}

pub fn deltas(a: &EvalReport, b: &EvalReport) -> Result<Deltas> {
    if a.per_class_accuracy.len() != b.per_class_accuracy.len() {
        return Err(Error::Shape(format!(
            "reports cover {} and {} classes",
            a.per_class_accuracy.len(),
            b.per_class_accuracy.len()
        )));
    }
    Ok(Deltas {
        accuracy: b.accuracy - a.accuracy,
        macro_precision: b.macro_precision - a.macro_precision,
        macro_recall: b.macro_recall - a.macro_recall,
        per_class_accuracy: a
            .per_class_accuracy
            .iter()
            .zip(&b.per_class_accuracy)
            .map(|(x, y)| y - x)
            .collect(),
        mean_ar: a.mean_ar.zip(b.mean_ar).map(|(x, y)| y - x),
    })
}

impl ComparisonReport {
    pub fn from_reports(unrefined: EvalReport, exbl: EvalReport) -> Result<Self> {
        let deltas = deltas(&unrefined, &exbl)?;
        Ok(ComparisonReport {
            unrefined,
            exbl,
            deltas,
        })
    }
}

/// Evaluates both models on `bundle`; deltas are `b − a`.
pub fn compare_checkpoints(a: &Model, b: &Model, bundle: &DatasetBundle) -> Result<ComparisonReport> {
    ComparisonReport::from_reports(evaluate(a, bundle)?, evaluate(b, bundle)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn fmt_delta(v: f64) -> String {
    format!("{v:+.3}")
}

/// Markdown tables: overall metrics, then per-class accuracy.
pub fn format_tables(report: &ComparisonReport, class_names: &[String]) -> String {
    let (a, b, d) = (&report.unrefined, &report.exbl, &report.deltas);
    let mut out = String::new();
    let _ = writeln!(out, "| Model | Accuracy | Precision | Recall | Mean AR |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for (name, r) in [("Unrefined", a), ("eXBL", b)] {
        let _ = writeln!(
            out,
            "| {name} | {:.3} | {:.3} | {:.3} | {} |",
            r.accuracy,
            r.macro_precision,
            r.macro_recall,
            fmt_opt(r.mean_ar)
        );
    }
    let _ = writeln!(
        out,
        "| Δ | {} | {} | {} | {} |",
        fmt_delta(d.accuracy),
        fmt_delta(d.macro_precision),
        fmt_delta(d.macro_recall),
        d.mean_ar.map_or_else(|| "n/a".into(), fmt_delta)
    );
    out.push('\n');
    let _ = writeln!(out, "| Class | Unrefined | eXBL | Δ |");
    let _ = writeln!(out, "|---|---|---|---|");
    for (i, dv) in d.per_class_accuracy.iter().enumerate() {
        let name = class_names.get(i).map_or_else(|| i.to_string(), Clone::clone);
        let _ = writeln!(
            out,
            "| {name} | {:.3} | {:.3} | {} |",
            a.per_class_accuracy[i],
            b.per_class_accuracy[i],
            fmt_delta(*dv)
        );
    }
    out
}

fn mask_rgb(sample: &Sample) -> Result<Array3<f32>> {
    let mask = sample
        .mask
        .as_ref()
        .ok_or_else(|| Error::invalid("samples", format!("'{}' has no mask", sample.id)))?;
    Ok(Array3::from_shape_fn((mask.dim().0, mask.dim().1, 3), |(y, x, _)| {
        f32::from(mask[[y, x]])
    }))
}

fn rgb(image: &Array3<f32>) -> Array3<f32> {
    let (h, w, c) = image.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, k)| image[[y, x, if c == 1 { 0 } else { k }]])
}

/// Columns of a panel for `m` models: input, mask, `m` cams, `m` overlays.
pub fn panel_columns(models: usize) -> usize {
    2 + 2 * models
}

/// Writes `<id>_panel.png` per sample: input | mask | cam per model | overlay per model.
/// Cams explain the predicted class.
pub fn render_panels(models: &[&Model], samples: &[&Sample], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cams = Vec::with_capacity(models.len());
    for m in models {
        cams.push(cams_for_samples(m, samples, CamClass::Predicted, 32)?);
    }
    let cols = panel_columns(models.len());
    let mut files = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let (h, w, _) = sample.image.dim();
        let mut tiles = vec![rgb(&sample.image), mask_rgb(sample)?];
        for per_model in &cams {
            tiles.push(colorize(&per_model[i]));
        }
        for per_model in &cams {
            tiles.push(overlay(&sample.image, &per_model[i], OVERLAY_ALPHA)?);
        }
        let mut grid = Array3::zeros((h, w * cols, 3));
        for (c, tile) in tiles.iter().enumerate() {
            grid.slice_mut(s![.., c * w..(c + 1) * w, ..]).assign(tile);
        }
        let path = out_dir.join(format!("{}_panel.png", sample.id));
        imageio::write_rgb(&path, &grid)?;
        files.push(path);
    }
    Ok(files)
}
