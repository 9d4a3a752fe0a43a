use std::collections::BTreeMap;
use std::fmt::Write;

use super::config::OutputFormat;
use super::run::ResultRow;
use super::{BenchError, Result};
use crate::trainer::Metrics;

pub const CSV_HEADER: &str = "dataset,model,augmented,seed,accuracy,auc,precision,recall,f1,time_s,memory_mb";

const ERR: &str = "ERR";

fn f1_of(row: &ResultRow) -> f64 {
    row.metrics().map_or(f64::NEG_INFINITY, |m| m.f1_macro)
}

/// Rows grouped by dataset (first-appearance order), each group sorted by
/// macro-F1 descending, then model, augmentation and seed ascending.
fn ordered(rows: &[ResultRow]) -> Vec<(String, Vec<&ResultRow>)> {
    let mut groups: Vec<(String, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(name, _)| *name == row.dataset) {
            Some((_, g)) => g.push(row),
            None => groups.push((row.dataset.clone(), vec![row])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|a, b| {
            f1_of(b)
                .total_cmp(&f1_of(a))
                .then_with(|| a.model.cmp(&b.model))
                .then_with(|| a.augmented.cmp(&b.augmented))
                .then_with(|| a.seed.cmp(&b.seed))
        });
    }
    groups
}

fn score_cells(m: &Metrics) -> [String; 7] {
    [
        format!("{:.4}", m.accuracy),
        format!("{:.4}", m.auc_macro),
        format!("{:.4}", m.precision_macro),
        format!("{:.4}", m.recall_macro),
        format!("{:.4}", m.f1_macro),
        format!("{:.2}", m.time_seconds),
        format!("{:.2}", m.memory_mb),
    ]
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summary(out: &mut String, group: &[&ResultRow]) {
    let mut cells: BTreeMap<(String, bool), Vec<&Metrics>> = BTreeMap::new();
    for row in group {
        if let Some(m) = row.metrics() {
            cells.entry((row.model.clone(), row.augmented)).or_default().push(m);
        }
    }
    let mut lines: Vec<(f64, String)> = Vec::new();
    for ((model, augmented), ms) in cells {
        let cols: [fn(&Metrics) -> f64; 7] = [
            |m| m.accuracy,
            |m| m.auc_macro,
            |m| m.precision_macro,
            |m| m.recall_macro,
            |m| m.f1_macro,
            |m| m.time_seconds,
            |m| m.memory_mb,
        ];
        let mut line = format!("| {model} | {} | {} |", yes_no(augmented), ms.len());
        let mut f1_mean = 0.0;
        for (i, col) in cols.iter().enumerate() {
            let (mean, std) = mean_std(&ms.iter().map(|m| col(m)).collect::<Vec<_>>());
            if i == 4 {
                f1_mean = mean;
            }
            let prec = if i < 5 { 4 } else { 2 };
            let _ = write!(line, " {mean:.prec$} ± {std:.prec$} |");
        }
        lines.push((f1_mean, line));
    }
    lines.sort_by(|a, b| b.0.total_cmp(&a.0));
    out.push_str(
        "\n| Model | Augmented | Seeds | Accuracy | AUC | Precision | Recall | F1 | Time (s) | Memory (MB) |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for (_, line) in lines {
        out.push_str(&line);
        out.push('\n');
    }
}

/// Renders result rows. Markdown output has one section per dataset and
/// a mean ± std summary when a dataset was run with several seeds.
pub fn emit_table(rows: &[ResultRow], format: OutputFormat) -> String {
    let groups = ordered(rows);
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for (_, group) in &groups {
                for row in group {
                    let cells = match row.metrics() {
                        Some(m) => score_cells(m).to_vec(),
                        None => vec![ERR.to_string(); 7],
                    };
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(&row.dataset),
                        csv_field(&row.model),
                        row.augmented,
                        row.seed,
                        cells.join(",")
                    );
                }
            }
        }
        OutputFormat::Markdown => {
            for (i, (name, group)) in groups.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "## {name}\n");
                out.push_str("| Model | Augmented | Seed | Accuracy | AUC | Precision | Recall | F1 | Time (s) | Memory (MB) |\n");
                out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
                for row in group {
                    let cells = match row.metrics() {
                        Some(m) => score_cells(m).to_vec(),
                        None => vec![ERR.to_string(); 7],
                    };
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} |",
                        row.model,
                        yes_no(row.augmented),
                        row.seed,
                        cells.join(" | ")
                    );
                }
                let seeds: std::collections::BTreeSet<u64> = group.iter().map(|r| r.seed).collect();
                if seeds.len() > 1 {
                    summary(&mut out, group);
                }
                let errors: Vec<_> = group
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().err().map(|e| (r, e)))
                    .collect();
                if !errors.is_empty() {
                    out.push('\n');
                    for (r, e) in errors {
                        let _ = writeln!(out, "- {} ({}, seed {}): {e}", r.model, yes_no(r.augmented), r.seed);
                    }
                }
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses the CSV rendering back into rows. Error rows come back with an
/// empty error message.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| BenchError::Table(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(BenchError::Table(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| BenchError::Table(e.to_string()))?;
        let line = i + 2;
        let bad = |what: &str| BenchError::Table(format!("line {line}: bad {what}"));
        let augmented = rec[2].parse().map_err(|_| bad("augmented flag"))?;
        let seed = rec[3].parse().map_err(|_| bad("seed"))?;
        let outcome = if rec[4] == *ERR {
            Err(String::new())
        } else {
            let mut v = [0.0; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = rec[4 + k].parse().map_err(|_| bad("number"))?;
            }
            Ok(Metrics {
                accuracy: v[0],
                auc_macro: v[1],
                precision_macro: v[2],
                recall_macro: v[3],
                f1_macro: v[4],
                time_seconds: v[5],
                memory_mb: v[6],
            })
        };
        rows.push(ResultRow {
            dataset: rec[0].to_string(),
            model: rec[1].to_string(),
            augmented,
            seed,
            outcome,
        });
    }
    Ok(rows)
}
