//! Text rendering of evaluation and curation reports.

use std::fmt::Write;

use clap::ValueEnum;
use ktseg_core::filtering::CurationReport;
use ktseg_core::metrics::EvaluationReport;
use serde_json::json;

use crate::error::{KtError, Result};
use crate::stages::AnyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// `mean±std` in percent with two decimals, e.g. `85.00±14.48`.
pub fn percent_cell(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

fn eval_json(r: &EvaluationReport) -> serde_json::Value {
    json!({
        "type": "evaluation",
        "model": r.model_id,
        "dataset": r.dataset,
        "n": r.per_sample_dice.len(),
        "dice": percent_cell(r.mean, r.std),
        "mean_pct": format!("{:.2}", 100.0 * r.mean),
        "std_pct": format!("{:.2}", 100.0 * r.std),
    })
}

fn curation_json(r: &CurationReport) -> serde_json::Value {
    json!({
        "type": "curation",
        "dataset": r.dataset,
        "before": r.total,
        "after": r.kept,
        "few_target_pixels": r.excluded_by_reason.few_target_pixels,
        "high_entropy": r.excluded_by_reason.high_entropy,
    })
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::from("|");
        for (c, w) in cells.zip(&widths) {
            let pad = w - c.chars().count();
            write!(s, " {c}{} |", " ".repeat(pad)).unwrap();
        }
        s.push('\n');
        s
    };
    let mut out = line(&mut headers.iter().copied());
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

fn csv(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

const EVAL_HEADERS: [&str; 4] = ["model", "dataset", "n", "dice (±std, %)"];
const CURATION_HEADERS: [&str; 5] = [
    "dataset",
    "before",
    "after",
    "few_target_pixels",
    "high_entropy",
];

/// Renders reports in input order. Evaluation and curation reports form
/// separate sections in table and CSV output.
pub fn emit_report(reports: &[AnyReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(KtError::InvalidArgument("no reports to emit".into()));
    }
    if format == ReportFormat::Json {
        let docs: Vec<_> = reports
            .iter()
            .map(|r| match r {
                AnyReport::Evaluation(e) => eval_json(e),
                AnyReport::Curation(c) => curation_json(c),
            })
            .collect();
        return Ok(serde_json::to_string_pretty(&docs).expect("json serializes") + "\n");
    }
    let mut eval_rows = Vec::new();
    let mut cur_rows = Vec::new();
    for r in reports {
        match r {
            AnyReport::Evaluation(e) => eval_rows.push(vec![
                e.model_id.clone(),
                e.dataset.clone(),
                e.per_sample_dice.len().to_string(),
                match format {
                    ReportFormat::Csv => format!("{:.2},{:.2}", 100.0 * e.mean, 100.0 * e.std),
                    _ => percent_cell(e.mean, e.std),
                },
            ]),
            AnyReport::Curation(c) => cur_rows.push(vec![
                c.dataset.clone(),
                c.total.to_string(),
                c.kept.to_string(),
                c.excluded_by_reason.few_target_pixels.to_string(),
                c.excluded_by_reason.high_entropy.to_string(),
            ]),
        }
    }
    let mut sections = Vec::new();
    match format {
        ReportFormat::Table => {
            if !eval_rows.is_empty() {
                sections.push(table(&EVAL_HEADERS, &eval_rows));
            }
            if !cur_rows.is_empty() {
                sections.push(table(&CURATION_HEADERS, &cur_rows));
            }
        }
        _ => {
            if !eval_rows.is_empty() {
                let rows: Vec<Vec<String>> = eval_rows
                    .into_iter()
                    .map(|mut r| {
                        let cell = r.pop().unwrap();
                        let (mean, std) = cell.split_once(',').unwrap();
                        r.extend([mean.to_string(), std.to_string()]);
                        r
                    })
                    .collect();
                sections.push(csv(
                    &["model", "dataset", "n", "mean_pct", "std_pct"],
                    &rows,
                ));
            }
            if !cur_rows.is_empty() {
                sections.push(csv(&CURATION_HEADERS, &cur_rows));
            }
        }
    }
    Ok(sections.join("\n"))
}
