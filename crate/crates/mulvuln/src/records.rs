//! Line-delimited JSON corpus records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mulvuln_core::corpus::{CodeSample, Language, SplitName};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown language tag {tag:?}")]
    UnknownLanguage { line: usize, tag: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    language: String,
    code: String,
    label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cwe: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cve: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses one record. `line` is 1-based and only used for errors.
pub fn parse_record(text: &str, line: usize) -> Result<CodeSample, RecordError> {
    let rec: Record = serde_json::from_str(text).map_err(|e| RecordError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let language: Language = rec
        .language
        .parse()
        .map_err(|_| RecordError::UnknownLanguage { line, tag: rec.language.clone() })?;
    if rec.label > 1 {
        return Err(RecordError::Malformed {
            line,
            message: format!("label {} is not 0 or 1", rec.label),
        });
    }
    let split = match rec.split {
        None => None,
        Some(s) => Some(s.parse::<SplitName>().map_err(|bad| RecordError::Malformed {
            line,
            message: format!("unknown split {bad:?}"),
        })?),
    };
    Ok(CodeSample {
        id: rec.id,
        language,
        code: rec.code,
        label: rec.label,
        cwe: rec.cwe,
        cve: rec.cve,
        split,
    })
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<CodeSample>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RecordError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<CodeSample>, RecordError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_records(BufReader::new(file))
}

pub fn record_line(sample: &CodeSample) -> String {
    let rec = Record {
        id: sample.id.clone(),
        language: sample.language.tag().to_string(),
        code: sample.code.clone(),
        label: sample.label,
        cwe: sample.cwe.clone(),
        cve: sample.cve.clone(),
        split: sample.split.map(|s| s.as_str().to_string()),
    };
    serde_json::to_string(&rec).expect("records serialize")
}

pub fn write_records(path: &Path, samples: &[CodeSample]) -> Result<(), RecordError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        writeln!(w, "{}", record_line(s)).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert!(read_records("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn single_record() {
        let s = read_records(r#"{"id":"a","language":"C","code":"int f(){}","label":0}"#.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].label, 0);
        assert_eq!(s[0].language, Language::C);
    }

    #[test]
    fn unknown_fields_ignored_and_aliases_accepted() {
        let text = concat!(
            r#"{"id":"a","language":"C++","code":"x","label":1,"cwe":"CWE-787","extra":[1,2]}"#,
            "\n",
            r#"{"id":"b","language":"JavaScript","code":"y","label":0,"split":"valid"}"#,
            "\n"
        );
        let s = read_records(text.as_bytes()).unwrap();
        assert_eq!(s[0].language, Language::Cpp);
        assert_eq!(s[0].cwe.as_deref(), Some("CWE-787"));
        assert_eq!(s[1].split, Some(SplitName::Val));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\"id\":\"a\",\"language\":\"C\",\"code\":\"x\",\"label\":0}\n{not json}\n";
        match read_records(text.as_bytes()) {
            Err(RecordError::Malformed { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = "{\"id\":\"a\",\"language\":\"Rust\",\"code\":\"x\",\"label\":0}\n";
        match read_records(text.as_bytes()) {
            Err(RecordError::UnknownLanguage { line: 1, tag }) => assert_eq!(tag, "Rust"),
            other => panic!("{other:?}"),
        }
        let text = "{\"id\":\"a\",\"language\":\"C\",\"code\":\"x\",\"label\":2}\n";
        assert!(matches!(read_records(text.as_bytes()), Err(RecordError::Malformed { line: 1, .. })));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut a = CodeSample::new("x1", Language::Go, "func f() {\n\t\"q\"\n}", 1);
        a.cwe = Some("CWE-78".into());
        a.split = Some(SplitName::Test);
        let b = CodeSample::new("x2", Language::Python, "def g():\n    pass", 0);
        write_records(&path, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(load_records(&path).unwrap(), vec![a, b]);
    }
}
