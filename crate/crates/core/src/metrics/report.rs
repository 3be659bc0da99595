use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::svg::{line_plot_svg, Series};
use super::{EvalReport, MetricsError};
use crate::nn::History;

pub const REPORT_SCHEMA: &str = "ipred.eval/1";

#[derive(Clone, Debug, Default)]
pub struct RenderOptions {
    pub plots: bool,
    pub history: Option<History>,
    /// Extra top-level JSON fields, e.g. config and checkpoint hashes.
    pub provenance: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderedFiles {
    pub json: PathBuf,
    pub text: PathBuf,
    pub roc_csv: Option<PathBuf>,
    pub roc_svg: Option<PathBuf>,
    pub loss_svg: Option<PathBuf>,
}

/// Classification report in the usual per-class precision/recall/F1 layout.
pub fn table_text(report: &EvalReport, digits: usize) -> String {
    let width = report.per_class.iter().map(|c| c.class.len()).chain(["Weighted Avg".len()]).max().unwrap_or(12);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}", "", "Precision", "Recall", "F1-score", "Support");
    for c in &report.per_class {
        let _ = writeln!(s, "{:<width$}  {:>9.digits$}  {:>9.digits$}  {:>9.digits$}  {:>9}", c.class, c.precision, c.recall, c.f1, c.support);
    }
    let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9.digits$}  {:>9}", "Accuracy", "", "", report.accuracy, report.macro_avg.support);
    for (name, a) in [("Macro Avg", &report.macro_avg), ("Weighted Avg", &report.weighted_avg)] {
        let _ = writeln!(s, "{:<width$}  {:>9.digits$}  {:>9.digits$}  {:>9.digits$}  {:>9}", name, a.precision, a.recall, a.f1, a.support);
    }
    s
}

pub fn report_json(report: &EvalReport, opts: &RenderOptions) -> Result<String, MetricsError> {
    let mut v = json!({ "schema": REPORT_SCHEMA });
    let obj = v.as_object_mut().expect("object literal");
    for (k, val) in &opts.provenance {
        obj.insert(k.clone(), val.clone());
    }
    obj.insert("report".into(), serde_json::to_value(report)?);
    if let Some(h) = &opts.history {
        obj.insert("history".into(), serde_json::to_value(h)?);
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Training and validation loss per epoch.
pub fn loss_plot_svg(h: &History) -> String {
    let pts = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect::<Vec<_>>();
    let series = [Series { name: "train", points: pts(&h.train_loss) }, Series { name: "validation", points: pts(&h.val_loss) }];
    line_plot_svg("Loss", "epoch", "loss", &series, false)
}

/// Writes `<stem>.json` and `<stem>.txt`, plus the ROC CSV and the ROC and
/// loss-curve SVGs when requested and available.
pub fn render_report(report: &EvalReport, dir: &Path, stem: &str, opts: &RenderOptions) -> Result<RenderedFiles, MetricsError> {
    fs::create_dir_all(dir)?;
    let mut out = RenderedFiles { json: dir.join(format!("{stem}.json")), text: dir.join(format!("{stem}.txt")), ..Default::default() };
    fs::write(&out.json, report_json(report, opts)?)?;
    fs::write(&out.text, table_text(report, 2))?;
    if let Some(roc) = &report.roc {
        let csv = dir.join(format!("{stem}_roc.csv"));
        fs::write(&csv, roc.to_csv())?;
        out.roc_csv = Some(csv);
        if opts.plots {
            let title = format!("ROC (AUC = {:.4})", roc.auc);
            let series = [Series { name: "ROC", points: roc.points.iter().map(|p| (p.fpr, p.tpr)).collect() }];
            let path = dir.join(format!("{stem}_roc.svg"));
            fs::write(&path, line_plot_svg(&title, "false positive rate", "true positive rate", &series, true))?;
            out.roc_svg = Some(path);
        }
    }
    if let (true, Some(h)) = (opts.plots, &opts.history) {
        let path = dir.join(format!("{stem}_loss.svg"));
        fs::write(&path, loss_plot_svg(h))?;
        out.loss_svg = Some(path);
    }
    Ok(out)
}
