//! Result tables: a per-seed CSV and a rendered text table with
//! Mean ± Std and Best columns per configuration.

use std::collections::BTreeMap;
use std::path::Path;

use vsr_core::trainer::{AblationReport, RunReport, SeedResult};
use vsr_core::{Error, Result};

fn csv_quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Split one CSV line honoring double-quoted fields.
fn csv_fields(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            }
            '"' if cur.is_empty() => quoted = true,
            ',' if !quoted => {
                fields.push(core::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// One CSV row per (configuration, seed), plus one row per failure.
pub fn to_csv(report: &AblationReport) -> String {
    let mut out = String::from("label,seed,wer,cer,status,message\n");
    for row in &report.rows {
        for s in &row.seeds {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},ok,\n",
                csv_quote(&row.label),
                s.seed,
                s.wer,
                s.cer
            ));
        }
        for f in &row.failures {
            out.push_str(&format!("{},,,,failed,{}\n", csv_quote(&row.label), csv_quote(f)));
        }
    }
    out
}

pub fn from_csv(text: &str, origin: &str) -> Result<AblationReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "label,seed,wer,cer,status,message" => {}
        _ => {
            return Err(Error::data(format!(
                "{origin}: expected header label,seed,wer,cer,status,message"
            )))
        }
    }
    // Preserve first-appearance order of labels.
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, RunReport> = BTreeMap::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = csv_fields(line);
        if fields.len() != 6 {
            return Err(Error::data(format!(
                "{origin} line {}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label = fields[0].clone();
        if !rows.contains_key(&label) {
            order.push(label.clone());
            rows.insert(
                label.clone(),
                RunReport { label: label.clone(), seeds: Vec::new(), failures: Vec::new() },
            );
        }
        let row = rows.get_mut(&label).unwrap();
        match fields[4].as_str() {
            "ok" => {
                let parse = |i: usize, what: &str| -> Result<f64> {
                    fields[i].parse().map_err(|_| {
                        Error::data(format!(
                            "{origin} line {}: bad {what} {:?}",
                            lineno + 1,
                            fields[i]
                        ))
                    })
                };
                let seed: u64 = fields[1].parse().map_err(|_| {
                    Error::data(format!("{origin} line {}: bad seed {:?}", lineno + 1, fields[1]))
                })?;
                row.seeds.push(SeedResult { seed, wer: parse(2, "wer")?, cer: parse(3, "cer")? });
            }
            "failed" => row.failures.push(fields[5].clone()),
            other => {
                return Err(Error::data(format!(
                    "{origin} line {}: unknown status {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(AblationReport { rows: order.into_iter().map(|l| rows.remove(&l).unwrap()).collect() })
}

/// Text table: one row per configuration with Mean ± Std and Best columns
/// for both error rates, all in percent.
pub fn render_table(report: &AblationReport) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "configuration".into(),
        "WER mean±std".into(),
        "WER best".into(),
        "CER mean±std".into(),
        "CER best".into(),
    ]];
    let mut notes = Vec::new();
    for r in &report.rows {
        if r.seeds.is_empty() {
            rows.push([r.label.clone(), "-".into(), "-".into(), "-".into(), "-".into()]);
        } else {
            let (wm, ws, wb) = r.wer_stats();
            let (cm, cs, cb) = r.cer_stats();
            rows.push([
                r.label.clone(),
                format!("{wm:.2} ± {ws:.2}"),
                format!("{wb:.2}"),
                format!("{cm:.2} ± {cs:.2}"),
                format!("{cb:.2}"),
            ]);
        }
        for f in &r.failures {
            notes.push(format!("{}: {f}", r.label));
        }
    }
    let mut widths = [0usize; 5];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            if j == 0 {
                line.push_str(&format!("{cell:<w$}", w = widths[0]));
            } else {
                line.push_str(&format!("{cell:>w$}", w = widths[j]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    if !notes.is_empty() {
        out.push_str("\nfailed runs:\n");
        for n in &notes {
            out.push_str(&format!("  {n}\n"));
        }
    }
    out
}

pub fn write_report(csv_path: &Path, table_path: &Path, report: &AblationReport) -> Result<()> {
    std::fs::write(csv_path, to_csv(report))
        .map_err(|e| Error::data(format!("writing {}: {e}", csv_path.display())))?;
    std::fs::write(table_path, render_table(report))
        .map_err(|e| Error::data(format!("writing {}: {e}", table_path.display())))?;
    Ok(())
}
