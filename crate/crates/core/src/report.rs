//! Tabular LOCO reports, run logs and plot data.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::train::LocoReport;

/// Hex SHA-256 of a resolved configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A small grid of strings with a header row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Columns padded to their widest cell, first column left-aligned.
    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (k, cell) in cells.iter().enumerate() {
                if k > 0 {
                    s.push_str("  ");
                }
                if k == 0 {
                    write!(s, "{cell:<w$}", w = widths[k]).unwrap();
                } else {
                    write!(s, "{cell:>w$}", w = widths[k]).unwrap();
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

fn pm(mean: f64, std: f64) -> String {
    format!("{} ± {}", sig3(mean), sig3(std))
}

/// Three significant digits, fixed notation.
fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.2}");
    }
    let digits = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.digits$}")
}

/// Fold rows plus an overall row, one `mean ± std` column per report.
pub fn loco_table(reports: &[&LocoReport]) -> Table {
    let labels: Vec<String> = reports.iter().map(|r| format!("{} MSE", r.model)).collect();
    comparison_table(reports, &labels)
}

/// The same layout with caller-chosen column titles.
pub fn comparison_table(reports: &[&LocoReport], titles: &[String]) -> Table {
    let mut header = vec!["Fold (hold-out)".to_string()];
    header.extend(titles.iter().cloned());
    let mut rows = Vec::new();
    if let Some(first) = reports.first() {
        for (k, fold) in first.folds.iter().enumerate() {
            let mut row = vec![format!("{} ({})", k + 1, fold.held_out)];
            for r in reports {
                row.push(match r.fold(&fold.held_out) {
                    Some(f) => pm(f.mean, f.std),
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        let mut overall = vec!["Overall mean".to_string()];
        overall.extend(reports.iter().map(|r| pm(r.overall_mean, r.overall_std)));
        rows.push(overall);
    }
    Table { header, rows }
}

/// Unmodified graph against the intervened graph for one model.
pub fn intervention_table(unmodified: &LocoReport, intervened: &LocoReport) -> Table {
    comparison_table(
        &[unmodified, intervened],
        &["Unmodified Pathway".to_string(), "Edge Intervention".to_string()],
    )
}

/// Machine-readable fold summaries: one row per (column, fold) and per column overall.
pub fn loco_csv(reports: &[(&str, &LocoReport)]) -> String {
    let mut out = String::from("column,model,fold,mean,std,n_seeds\n");
    for (column, r) in reports {
        for f in &r.folds {
            writeln!(out, "{column},{},{},{},{},{}", r.model, f.held_out, f.mean, f.std, f.mses.len()).unwrap();
        }
        writeln!(out, "{column},{},overall,{},{},{}", r.model, r.overall_mean, r.overall_std, r.seeds.len()).unwrap();
    }
    out
}

#[derive(Serialize)]
struct RunLine<'a> {
    column: &'a str,
    model: &'a str,
    config_hash: &'a str,
    held_out: &'a str,
    seed: u64,
    mse: f64,
    epochs_run: usize,
    best_epoch: Option<usize>,
    final_train_loss: f64,
}

/// One JSON object per run.
pub fn run_log(column: &str, report: &LocoReport, config_hash: &str) -> String {
    let mut out = String::new();
    for r in &report.runs {
        let line = RunLine {
            column,
            model: &report.model,
            config_hash,
            held_out: &r.held_out,
            seed: r.seed,
            mse: r.mse,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            final_train_loss: r.final_train_loss,
        };
        out.push_str(&serde_json::to_string(&line).expect("run record serialises"));
        out.push('\n');
    }
    out
}

/// Test-time predictions of every run in standardised units.
pub fn predictions_csv(column: &str, report: &LocoReport, genes: &[String]) -> String {
    let mut out = String::from("column,model,held_out,seed,sample,gene,target,prediction\n");
    for r in &report.runs {
        for p in &r.predictions {
            let gene = genes.get(p.gene).map(String::as_str).unwrap_or("?");
            writeln!(
                out,
                "{column},{},{},{},{},{gene},{},{}",
                report.model, r.held_out, r.seed, p.sample, p.target, p.prediction
            )
            .unwrap();
        }
    }
    out
}
