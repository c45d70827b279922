//! Plain-text tables and line-delimited report records.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mulvuln_core::corpus::{CorpusStats, Language, LanguageCounts};
use mulvuln_core::eval::{BreakdownReport, GroupBy, MacroAverage, MetricsReport, TOP10_CWES};
use mulvuln_core::model::Mode;
use mulvuln_core::train::{SweepAxis, SweepRow};
use serde::{Deserialize, Serialize};

use crate::serial::MetricsJson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "table", rename_all = "snake_case")]
pub enum Record {
    Overall {
        key: String,
        count: usize,
        metrics: MetricsJson,
    },
    Language {
        key: String,
        count: usize,
        metrics: MetricsJson,
    },
    Cwe {
        key: String,
        count: usize,
        metrics: MetricsJson,
    },
    CweAverage {
        recall: f64,
        precision: f64,
        f1: f64,
        groups: usize,
        vulnerable: usize,
        total: usize,
    },
    Sweep {
        axis: String,
        mode: String,
        label: String,
        best_epoch: usize,
        val: MetricsJson,
        test: MetricsJson,
        initial_loss: f64,
        final_loss: f64,
        initial_ce: f64,
        final_ce: f64,
    },
}

pub fn overall_record(key: &str, m: &MetricsReport) -> Record {
    Record::Overall {
        key: key.to_string(),
        count: m.total(),
        metrics: m.into(),
    }
}

pub fn breakdown_records(report: &BreakdownReport) -> Vec<Record> {
    let mut out: Vec<Record> = report
        .rows
        .iter()
        .map(|r| {
            let (key, count, metrics) = (r.key.clone(), r.count, (&r.metrics).into());
            match report.by {
                GroupBy::Language => Record::Language { key, count, metrics },
                GroupBy::Cwe => Record::Cwe { key, count, metrics },
            }
        })
        .collect();
    if let Some(MacroAverage {
        recall,
        precision,
        f1,
        groups,
    }) = report.top10_average
    {
        let top: Vec<_> = report
            .rows
            .iter()
            .filter(|r| TOP10_CWES.contains(&r.key.as_str()))
            .collect();
        out.push(Record::CweAverage {
            recall,
            precision,
            f1,
            groups,
            vulnerable: top.iter().map(|r| r.metrics.tp + r.metrics.fn_).sum(),
            total: top.iter().map(|r| r.count).sum(),
        });
    }
    out
}

pub fn sweep_records(axis: &SweepAxis, mode: Mode, rows: &[SweepRow]) -> Vec<Record> {
    rows.iter()
        .map(|r| Record::Sweep {
            axis: axis.name().to_string(),
            mode: mode.as_str().to_string(),
            label: r.label.clone(),
            best_epoch: r.best_epoch,
            val: (&r.val).into(),
            test: (&r.test).into(),
            initial_loss: r.initial_loss,
            final_loss: r.final_loss,
            initial_ce: r.initial_ce,
            final_ce: r.final_ce,
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[Record]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("records serialize"))?;
    }
    w.flush()
}

pub fn read_records(path: &Path) -> std::io::Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(r);
    }
    Ok(out)
}

/// `96.86%`; a fraction in, two decimals out.
pub fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Aligned table. The first column is left-aligned, the rest right-aligned.
/// A horizontal rule is drawn before every row index in `rules`.
pub fn render_table(headers: &[&str], rows: &[Vec<String>], rules: &[usize]) -> String {
    let n = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let total = widths.iter().sum::<usize>() + 3 * (n.saturating_sub(1));
    let rule = "-".repeat(total);
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str(" | ");
            }
            if i == 0 {
                write!(s, "{c:<w$}").expect("string write");
            } else {
                write!(s, "{c:>w$}").expect("string write");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&rule);
    out.push('\n');
    out.push_str(&line(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>()));
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if i > 0 && rules.contains(&i) {
            out.push_str(&rule);
            out.push('\n');
        }
        out.push_str(&line(r));
        out.push('\n');
    }
    out.push_str(&rule);
    out.push('\n');
    out
}

fn rpf(m: &MetricsJson) -> [String; 3] {
    [pct(m.recall), pct(m.precision), pct(m.f1)]
}

pub fn metrics_table(rows: &[(String, MetricsJson)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, m)| {
            let mut r = vec![k.clone()];
            r.extend(rpf(m));
            r
        })
        .collect();
    render_table(&["Methods", "Recall", "Precision", "F1-score"], &body, &[])
}

pub fn language_table(rows: &[(String, usize, MetricsJson)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, n, m)| {
            let mut r = vec![k.clone()];
            r.extend(rpf(m));
            r.push(n.to_string());
            r
        })
        .collect();
    render_table(&["Languages", "Recall", "Precision", "F1-score", "Samples"], &body, &[])
}

/// Top-10 CWE rows in their fixed order, then the Average row.
pub fn cwe_table(rows: &[(String, usize, MetricsJson)], average: Option<(f64, f64, usize, usize)>) -> String {
    let mut body = Vec::new();
    for cwe in TOP10_CWES {
        if let Some((_, n, m)) = rows.iter().find(|(k, _, _)| k == cwe) {
            body.push(vec![
                cwe.to_string(),
                pct(m.recall),
                pct(m.f1),
                (m.tp + m.fn_).to_string(),
                n.to_string(),
            ]);
        }
    }
    let mut rules = Vec::new();
    if let Some((recall, f1, vul, total)) = average {
        rules.push(body.len());
        body.push(vec!["Average".into(), pct(recall), pct(f1), vul.to_string(), total.to_string()]);
    }
    render_table(&["CWEs", "Recall", "F1-score", "Vul Samples", "Total Samples"], &body, &rules)
}

/// Per-language split and label counts, languages by ascending total.
pub fn stats_table(stats: &CorpusStats) -> String {
    let row = |name: &str, c: &LanguageCounts| {
        vec![
            name.to_string(),
            c.train.to_string(),
            c.val.to_string(),
            c.test.to_string(),
            c.vulnerable.to_string(),
            c.non_vulnerable.to_string(),
            c.total().to_string(),
        ]
    };
    let mut langs: Vec<Language> = Language::ALL.to_vec();
    langs.sort_by_key(|l| stats.language(*l).total());
    let mut body: Vec<Vec<String>> = langs.iter().map(|l| row(l.display_name(), stats.language(*l))).collect();
    let rule = body.len();
    body.push(row("Total", &stats.totals));
    render_table(
        &["Languages", "Training", "Validation", "Test", "Vul", "Non-Vul", "Total"],
        &body,
        &[rule],
    )
}

fn method_label(axis: &str, mode: &str, label: &str) -> String {
    match axis {
        "topk" | "mpl" => {
            let unit = if label == "1" { "pm" } else { "pms" };
            format!("MULVULN ({label} {unit}) w/ {mode}")
        }
        _ => format!("MULVULN w/ {mode}"),
    }
}

struct SweepView<'a> {
    axis: &'a str,
    mode: &'a str,
    label: &'a str,
    test: &'a MetricsJson,
    initial_loss: f64,
    final_loss: f64,
    initial_ce: f64,
    final_ce: f64,
}

/// Appendix layouts: the `lp` axis carries an `L_p` column, the selection
/// axes fold the count into the method name, other axes get a value column.
fn sweep_table(rows: &[SweepView<'_>]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut rules = Vec::new();
    let mut body = Vec::new();
    let headers: Vec<&str> = match first.axis {
        "lp" => vec!["Methods", "L_p", "Recall", "Precision", "F1-score"],
        "topk" | "mpl" => vec!["Methods", "Recall", "Precision", "F1-score"],
        "lambda" => vec!["Methods", "lambda", "Recall", "Precision", "F1-score"],
        _ => vec!["Methods", first.axis, "Recall", "Precision", "F1-score"],
    };
    for (i, r) in rows.iter().enumerate() {
        if i > 0 && r.mode != rows[i - 1].mode {
            rules.push(i);
        }
        let mut cells = vec![method_label(r.axis, r.mode, r.label)];
        if !matches!(r.axis, "topk" | "mpl") {
            cells.push(r.label.to_string());
        }
        cells.extend(rpf(r.test));
        body.push(cells);
    }
    render_table(&headers, &body, &rules)
}

fn loss_table(rows: &[SweepView<'_>]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let drop = if r.initial_loss != 0.0 {
                1.0 - r.final_loss / r.initial_loss
            } else {
                0.0
            };
            vec![
                format!("{} {}={}", r.mode, r.axis, r.label),
                format!("{:.4}", r.initial_loss),
                format!("{:.4}", r.final_loss),
                pct(drop),
                format!("{:.4}", r.initial_ce),
                format!("{:.4}", r.final_ce),
            ]
        })
        .collect();
    render_table(
        &["Setting", "Initial loss", "Final loss", "Drop", "Initial CE", "Final CE"],
        &body,
        &[],
    )
}

/// Renders every table the records describe, in a fixed order.
pub fn render(records: &[Record]) -> String {
    let mut overall = Vec::new();
    let mut langs = Vec::new();
    let mut cwes = Vec::new();
    let mut average = None;
    let mut sweeps = Vec::new();
    for r in records {
        match r {
            Record::Overall { key, metrics, .. } => overall.push((key.clone(), metrics.clone())),
            Record::Language { key, count, metrics } => langs.push((key.clone(), *count, metrics.clone())),
            Record::Cwe { key, count, metrics } => cwes.push((key.clone(), *count, metrics.clone())),
            Record::CweAverage {
                recall,
                f1,
                vulnerable,
                total,
                ..
            } => average = Some((*recall, *f1, *vulnerable, *total)),
            Record::Sweep {
                axis,
                mode,
                label,
                test,
                initial_loss,
                final_loss,
                initial_ce,
                final_ce,
                ..
            } => sweeps.push(SweepView {
                axis,
                mode,
                label,
                test,
                initial_loss: *initial_loss,
                final_loss: *final_loss,
                initial_ce: *initial_ce,
                final_ce: *final_ce,
            }),
        }
    }
    let mut out = String::new();
    if !overall.is_empty() {
        out.push_str(&metrics_table(&overall));
        out.push('\n');
    }
    if !langs.is_empty() {
        out.push_str(&language_table(&langs));
        out.push('\n');
    }
    if !cwes.is_empty() {
        out.push_str(&cwe_table(&cwes, average));
        out.push('\n');
    }
    if !sweeps.is_empty() {
        out.push_str(&sweep_table(&sweeps));
        out.push('\n');
        out.push_str(&loss_table(&sweeps));
        out.push('\n');
    }
    out
}
