//! Evaluation reports on disk and their SVG renderings.
//!
//! A report directory holds `per_class.csv` (class, support, precision,
//! recall, f1), `confusion.csv` (rows are true classes, columns predicted,
//! both labelled by class name) and `summary.txt` (`key = value` lines).
//! Floats are written in shortest round-trip form, so reading a written
//! report gives back the same numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{ClassScores, ConfusionMatrix, EvalReport};

pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const F1_CHART_FILE: &str = "f1_per_class.svg";
pub const CONFUSION_CHART_FILE: &str = "confusion.svg";

const SUMMARY_KEYS: [&str; 5] = ["top1", "top5", "macro_precision", "macro_recall", "macro_f1"];

fn format_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        line,
        reason: reason.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    format_err(line, e.to_string())
}

fn check_names(names: &[String], classes: usize) -> Result<()> {
    if names.len() != classes {
        return Err(Error::dim(format!("{} class names for {classes} classes", names.len())));
    }
    Ok(())
}

pub fn summary_text(report: &EvalReport) -> String {
    let values = [
        report.top1,
        report.top5,
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
    ];
    SUMMARY_KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Writes the three report files into `dir`, creating it if needed.
pub fn write_report(report: &EvalReport, class_names: &[String], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    check_names(class_names, report.num_classes())?;
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join(PER_CLASS_FILE))?;
    w.write_record(["class", "support", "precision", "recall", "f1"])?;
    for (name, s) in class_names.iter().zip(&report.per_class) {
        w.write_record([
            name.clone(),
            s.support.to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(CONFUSION_FILE))?;
    w.write_record(std::iter::once("true\\predicted").chain(class_names.iter().map(String::as_str)))?;
    for (c, name) in class_names.iter().enumerate() {
        let row = report.confusion.row(c).iter().map(u64::to_string);
        w.write_record(std::iter::once(name.clone()).chain(row))?;
    }
    w.flush()?;

    fs::write(dir.join(SUMMARY_FILE), summary_text(report))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| format_err(line, format!("invalid {what} `{field}`")))
}

/// Rows of a per-class CSV.
pub fn read_per_class(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<ClassScores>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let expected = ["class", "support", "precision", "recall", "f1"];
    if header.iter().map(str::trim).ne(expected) {
        return Err(format_err(1, format!("expected header {}", expected.join(","))));
    }
    let (mut names, mut scores) = (Vec::new(), Vec::new());
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let score = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = parse_field(&record[i], line, what)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format_err(line, format!("{what} {v} outside [0, 1]")));
            }
            Ok(v)
        };
        scores.push(ClassScores {
            support: parse_field(&record[1], line, "support")?,
            precision: score(2, "precision")?,
            recall: score(3, "recall")?,
            f1: score(4, "f1")?,
        });
        names.push(record[0].trim().to_string());
    }
    if names.is_empty() {
        return Err(format_err(1, "no class rows"));
    }
    Ok((names, scores))
}

/// A labelled K×K count matrix.
pub fn read_confusion(path: impl AsRef<Path>) -> Result<(Vec<String>, ConfusionMatrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_err)?,
        None => return Err(format_err(1, "empty confusion matrix file")),
    };
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if names.is_empty() {
        return Err(format_err(1, "header lists no classes"));
    }
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let i = rows.len();
        if i >= names.len() {
            return Err(format_err(line, format!("more than {} rows", names.len())));
        }
        if record[0].trim() != names[i] {
            return Err(format_err(
                line,
                format!("row label `{}` does not match column `{}`", &record[0], names[i]),
            ));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|f| parse_field::<u64>(f, line, "count"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != names.len() {
        return Err(format_err(
            rows.len() + 2,
            format!("expected {} rows, found {}", names.len(), rows.len()),
        ));
    }
    Ok((names, ConfusionMatrix::from_rows(&rows)?))
}

/// `key = value` lines with keys from the summary block; unknown keys are rejected.
pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format_err(i + 1, "expected `key = value`"))?;
        let k = k.trim();
        if !SUMMARY_KEYS.contains(&k) {
            return Err(format_err(i + 1, format!("unknown key `{k}`")));
        }
        out.push((k.to_string(), parse_field(v, i + 1, k)?));
    }
    Ok(out)
}

/// Reads a report directory. `summary.txt` is optional: without it the
/// macro averages are recomputed from the per-class rows, top-1 comes from
/// the confusion diagonal and top-5 is NaN.
pub fn read_report(dir: impl AsRef<Path>) -> Result<(Vec<String>, EvalReport)> {
    let dir = dir.as_ref();
    let (names, per_class) = read_per_class(dir.join(PER_CLASS_FILE))?;
    let (matrix_names, confusion) = read_confusion(dir.join(CONFUSION_FILE))?;
    if names != matrix_names {
        return Err(format_err(1, format!("{CONFUSION_FILE} classes differ from {PER_CLASS_FILE}")));
    }
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let total = confusion.total();
    let mut report = EvalReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        top1: if total == 0 {
            0.0
        } else {
            confusion.correct() as f64 / total as f64
        },
        top5: f64::NAN,
        per_class,
        confusion,
    };
    let summary = dir.join(SUMMARY_FILE);
    if summary.exists() {
        for (key, v) in read_summary(summary)? {
            match key.as_str() {
                "top1" => report.top1 = v,
                "top5" => report.top5 = v,
                "macro_precision" => report.macro_precision = v,
                "macro_recall" => report.macro_recall = v,
                _ => report.macro_f1 = v,
            }
        }
    }
    Ok((names, report))
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Vertical bar chart of per-class F1 in the given order. Every class gets
/// a `<rect class="bar">`, including zero-height ones.
pub fn render_f1_chart(class_names: &[String], f1: &[f64]) -> Result<String> {
    check_names(class_names, f1.len())?;
    let (bar_w, gap, plot_h) = (28.0, 10.0, 300.0);
    let (left, top, bottom) = (60.0, 40.0, 160.0);
    let width = left + (bar_w + gap) * f1.len() as f64 + gap + 20.0;
    let height = top + plot_h + bottom;
    let base = top + plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">F1-score per class</text>"#,
        width / 2.0
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = base - v * plot_h;
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, width - 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#);
    for (i, (name, &v)) in class_names.iter().zip(f1).enumerate() {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let x = left + gap + i as f64 * (bar_w + gap);
        let h = v * plot_h;
        let name = escape(name);
        let _ = writeln!(
            s,
            r##"<rect class="bar" data-class="{name}" data-value="{v}" x="{x}" y="{}" width="{bar_w}" height="{h}" fill="#3b6ea8"/>"##,
            base - h
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{v:.2}</text>"#,
            x + bar_w / 2.0,
            base - h - 4.0
        );
        let (lx, ly) = (x + bar_w / 2.0, base + 12.0);
        let _ = writeln!(
            s,
            r#"<text x="{lx}" y="{ly}" text-anchor="end" transform="rotate(-60 {lx} {ly})">{name}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - 20.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Row-normalized confusion matrix (each true class sums to 1, empty rows
/// stay 0).
pub fn row_normalized(confusion: &ConfusionMatrix) -> Vec<Vec<f64>> {
    (0..confusion.num_classes())
        .map(|r| {
            let row = confusion.row(r);
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect()
}

fn heat_color(v: f64) -> String {
    let mix = |lo: f64, hi: f64| (lo + (hi - lo) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(247.0, 8.0), mix(251.0, 48.0), mix(255.0, 107.0))
}

/// Heat map of the row-normalized matrix, one `<rect class="cell">` and
/// one value annotation per entry.
pub fn render_confusion_heatmap(class_names: &[String], confusion: &ConfusionMatrix) -> Result<String> {
    let k = confusion.num_classes();
    check_names(class_names, k)?;
    let norm = row_normalized(confusion);
    let cell = 34.0;
    let (left, top) = (150.0, 150.0);
    let width = left + cell * k as f64 + 30.0;
    let height = top + cell * k as f64 + 50.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">Confusion matrix (row-normalized)</text>"#,
        width / 2.0
    );
    for (i, name) in class_names.iter().enumerate() {
        let name = escape(name);
        let y = top + cell * i as f64 + cell / 2.0 + 3.0;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{name}</text>"#, left - 6.0);
        let (lx, ly) = (left + cell * i as f64 + cell / 2.0, top - 6.0);
        let _ = writeln!(
            s,
            r#"<text x="{lx}" y="{ly}" text-anchor="start" transform="rotate(-60 {lx} {ly})">{name}</text>"#
        );
    }
    for (r, row) in norm.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let (x, y) = (left + cell * c as f64, top + cell * r as f64);
            let _ = writeln!(
                s,
                r##"<rect class="cell" data-row="{r}" data-col="{c}" data-value="{v}" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#fff"/>"##,
                heat_color(v)
            );
            let ink = if v > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text class="value" x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#,
        left + cell * k as f64 / 2.0,
        height - 15.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders the report found in `input` into `output`: the F1 bar chart,
/// the heat map and a summary text. Returns the written paths.
pub fn render_report_dir(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let (names, report) = read_report(input)?;
    let output = output.as_ref();
    fs::create_dir_all(output)?;
    let f1: Vec<f64> = report.per_class.iter().map(|s| s.f1).collect();
    let files = [
        (output.join(F1_CHART_FILE), render_f1_chart(&names, &f1)?),
        (
            output.join(CONFUSION_CHART_FILE),
            render_confusion_heatmap(&names, &report.confusion)?,
        ),
        (output.join(SUMMARY_FILE), summary_text(&report)),
    ];
    for (path, text) in &files {
        fs::write(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
