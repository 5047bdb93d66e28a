use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CellReport, ExperimentReport};
use crate::error::{Error, Result};
use crate::ope::curves_svg;
use crate::svg::LineChart;
use crate::util::fmt6;

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt6)
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

fn metric_rows<W: Write>(w: &mut csv::Writer<W>, report: &ExperimentReport, names: &[&str]) -> Result<()> {
    w.write_record(["dataset", "state", "model", "metric", "value", "ci_low", "ci_high", "n", "split_mean", "status"])?;
    for cell in &report.cells {
        if let Some(reason) = &cell.skip {
            for name in names {
                w.write_record([&report.name, &cell.state, cell.model.as_str(), name, "NA", "NA", "NA", "0", "NA", &format!("skipped: {reason}")])?;
            }
            continue;
        }
        for name in names {
            let Some(row) = cell.metric(name) else { continue };
            let e = row.estimate.as_ref();
            let status = match e.and_then(|e| e.warning.as_deref()) {
                Some(w) => format!("warning: {w}"),
                None if e.is_none() => "undefined".to_string(),
                None => "ok".to_string(),
            };
            w.write_record([
                report.name.clone(),
                cell.state.clone(),
                cell.model.as_str().to_string(),
                name.to_string(),
                opt6(e.map(|e| e.value)),
                opt6(e.map(|e| e.ci_low)),
                opt6(e.map(|e| e.ci_high)),
                row.n_rows.to_string(),
                opt6(row.split_mean),
                status,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fitted(report: &ExperimentReport) -> impl Iterator<Item = &CellReport> {
    report.cells.iter().filter(|c| c.skip.is_none())
}

/// Writes the report tables and figures; returns the files written.
pub fn render_report(report: &ExperimentReport, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = outdir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut notes = Vec::new();

    metric_rows(&mut writer(dir, "results.csv")?, report, &["auroc", "accuracy", "auroc_switch"])?;
    written.push("results.csv");
    metric_rows(&mut writer(dir, "calibration.csv")?, report, &["ece", "sce"])?;
    written.push("calibration.csv");

    if report.groups.is_some() {
        let mut w = writer(dir, "by_group.csv")?;
        w.write_record(["dataset", "state", "model", "group", "auroc", "n"])?;
        for cell in fitted(report) {
            if let Some(s) = &cell.by_group_auroc {
                for (g, (v, n)) in s.values.iter().zip(&s.counts).enumerate() {
                    w.write_record([&report.name, &cell.state, cell.model.as_str(), &(g + 1).to_string(), &opt6(*v), &n.to_string()])?;
                }
            }
        }
        w.flush()?;
        written.push("by_group.csv");
    } else {
        notes.push("by_group.csv omitted: no patient has a complete severity series of length >= 2".to_string());
    }

    let mut w = writer(dir, "by_stage.csv")?;
    w.write_record(["dataset", "state", "model", "stage", "auroc", "accuracy", "n"])?;
    for cell in fitted(report) {
        if let (Some(a), Some(b)) = (&cell.by_stage_auroc, &cell.by_stage_accuracy) {
            for t in 0..a.values.len() {
                w.write_record([
                    &report.name,
                    &cell.state,
                    cell.model.as_str(),
                    &(t + 1).to_string(),
                    &opt6(a.values[t]),
                    &opt6(b.values[t]),
                    &a.counts[t].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    written.push("by_stage.csv");

    if let Some(c) = &report.confusion {
        let mut w = writer(dir, "switch_confusion.csv")?;
        w.write_record(["reference", "comparison", "reference_action", "comparison_action", "count"])?;
        for (i, row) in c.matrix.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                w.write_record([&c.reference, &c.comparison, &c.labels[i], &c.labels[j], &n.to_string()])?;
            }
        }
        w.flush()?;
        written.push("switch_confusion.csv");
    } else {
        notes.push("switch_confusion.csv omitted: the compared cells have no predictions".to_string());
    }

    let mut w = writer(dir, "ope_curve.csv")?;
    w.write_record(["state", "model", "stage", "median", "mean", "n", "floored_events"])?;
    let mut curves = Vec::new();
    for cell in fitted(report) {
        if let Some(c) = &cell.ope {
            c.write_rows(&mut w, &cell.state, cell.model.as_str())?;
            curves.push((format!("{} {}", cell.state, cell.model.as_str()), c));
        }
    }
    w.flush()?;
    std::fs::write(dir.join("ope_curve.svg"), curves_svg(&curves))?;
    written.extend(["ope_curve.csv", "ope_curve.svg"]);

    if let Some(sweep) = &report.complexity {
        let mut w = writer(dir, "complexity.csv")?;
        w.write_record(["state", "bucket", "leaves_min", "leaves_max", "n_models", "best_leaves", "val_auroc", "test_auroc", "test_auroc_switch"])?;
        let mut chart = LineChart::new("Best tree per leaf-count bucket", "number of leaves", "test AUROC (switch states)");
        for state in sweep.leaf_counts.keys() {
            let pts: Vec<_> = sweep.points.iter().filter(|p| &p.state == state).collect();
            for p in &pts {
                w.write_record([
                    p.state.clone(),
                    p.bucket.to_string(),
                    p.leaves_min.to_string(),
                    p.leaves_max.to_string(),
                    p.n_models.to_string(),
                    p.best_leaves.to_string(),
                    opt6(p.val_auroc),
                    opt6(p.test_auroc),
                    opt6(p.test_auroc_switch),
                ])?;
            }
            chart.add(state, pts.iter().filter_map(|p| p.test_auroc_switch.map(|a| (p.best_leaves as f64, a))).collect());
        }
        w.flush()?;
        std::fs::write(dir.join("complexity.svg"), chart.render())?;
        written.extend(["complexity.csv", "complexity.svg"]);
    } else {
        notes.push("complexity.csv omitted: no tree sweep configured".to_string());
    }

    let bundle_dir = dir.join("models");
    if !report.bundles.is_empty() {
        std::fs::create_dir_all(&bundle_dir)?;
        for (name, b) in &report.bundles {
            std::fs::write(bundle_dir.join(format!("{name}.json")), serde_json::to_string_pretty(b)?)?;
        }
    }

    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    written.push("report.json");
    let skipped: Vec<String> =
        report.cells.iter().filter_map(|c| c.skip.as_ref().map(|r| format!("{} {}: {r}", c.state, c.model.as_str()))).collect();
    let manifest = serde_json::json!({
        "name": report.name,
        "meta": report.meta,
        "config": report.config,
        "files": written,
        "notes": notes,
        "skipped_cells": skipped,
        "model_bundles": report.bundles.iter().map(|(n, _)| format!("models/{n}.json")).collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    written.push("run_manifest.json");
    Ok(written.into_iter().map(|f| dir.join(f)).collect())
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = dir.as_ref().join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Plain-text AUROC table: one line per (state, model).
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut s = format!("{:<22} {:<5} {:>8} {:>19} {:>8}\n", "state", "model", "AUROC", "95% CI", "switch");
    for c in &report.cells {
        if let Some(r) = &c.skip {
            s += &format!("{:<22} {:<5} {r}\n", c.state, c.model.as_str());
            continue;
        }
        let pct = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{:.1}", 100.0 * x));
        let a = c.metric("auroc").and_then(|m| m.estimate.clone());
        let sw = c.metric("auroc_switch").and_then(|m| m.estimate.as_ref().map(|e| e.value));
        let ci = a.as_ref().map_or("NA".into(), |e| format!("({}, {})", pct(Some(e.ci_low)), pct(Some(e.ci_high))));
        s += &format!("{:<22} {:<5} {:>8} {:>19} {:>8}\n", c.state, c.model.as_str(), pct(a.map(|e| e.value)), ci, pct(sw));
    }
    s
}
