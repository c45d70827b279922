//! Tab-separated query/key vectors.
//!
//! Query rows: `query`, sample id, `LANG:selected`, then D values.
//! Key rows: `key`, parameter name, pool index, then D values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mulvuln_core::corpus::Language;
use mulvuln_core::eval::{EmbeddingExport, KeyRow, QueryRow};

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join("\t")
}

pub fn export_text(export: &EmbeddingExport) -> String {
    let mut out = String::new();
    for q in &export.queries {
        out.push_str(&format!(
            "query\t{}\t{}:{}\t{}\n",
            q.sample_id,
            q.language.tag(),
            q.selected,
            join(&q.vector)
        ));
    }
    for k in &export.keys {
        out.push_str(&format!("key\t{}\t{}\t{}\n", k.name, k.index, join(&k.vector)));
    }
    out
}

pub fn write_export(path: &Path, export: &EmbeddingExport) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(export_text(export).as_bytes())?;
    w.flush()
}

fn bad(line: usize, msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {}", msg.into()))
}

pub fn read_export(path: &Path) -> std::io::Result<EmbeddingExport> {
    let mut export = EmbeddingExport::default();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(bad(n, "expected at least 3 columns"));
        }
        let vector = cols[3..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| bad(n, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        match cols[0] {
            "query" => {
                let (lang, sel) = cols[2].split_once(':').ok_or_else(|| bad(n, "expected LANG:index"))?;
                export.queries.push(QueryRow {
                    sample_id: cols[1].to_string(),
                    language: lang.parse::<Language>().map_err(|e| bad(n, e.to_string()))?,
                    selected: sel.parse().map_err(|_| bad(n, "bad index"))?,
                    vector,
                });
            }
            "key" => export.keys.push(KeyRow {
                index: cols[2].parse().map_err(|_| bad(n, "bad index"))?,
                name: cols[1].to_string(),
                vector,
            }),
            other => return Err(bad(n, format!("unknown kind {other:?}"))),
        }
    }
    Ok(export)
}
