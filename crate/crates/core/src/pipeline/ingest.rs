//! Dataset loading from JSONL or CSV.
//!
//! Fields: `id` (optional, defaults to the 0-based row index), `text`
//! (required, non-empty) and `gold_label` (optional, must be a schema label).
//! Rows are numbered from 1 in error messages.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use crate::consensus::{LabelSchema, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "jsonl" | "ndjson" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

struct RawRow {
    row: usize,
    id: Option<String>,
    text: Option<String>,
    gold: Option<String>,
}

pub fn ingest(path: &Path, format: Option<Format>, schema: &LabelSchema) -> Result<Vec<Sample>> {
    let format = match format.or_else(|| Format::from_path(path)) {
        Some(f) => f,
        None => {
            return Err(Error::Config(format!(
                "cannot tell the format of {}; use .jsonl or .csv",
                path.display()
            )))
        }
    };
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let rows = match format {
        Format::Jsonl => read_jsonl(BufReader::new(file))?,
        Format::Csv => read_csv(file)?,
    };
    build_samples(rows, schema)
}

fn read_jsonl(reader: impl BufRead) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            row,
            reason: format!("invalid JSON: {e}"),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Ingest {
            row,
            reason: "expected a JSON object".into(),
        })?;
        let field = |name: &str| -> Result<Option<String>> {
            match obj.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(Value::Number(n)) if name != "text" => Ok(Some(n.to_string())),
                Some(other) => Err(Error::Ingest {
                    row,
                    reason: format!("field `{name}` has unsupported value {other}"),
                }),
            }
        };
        rows.push(RawRow {
            row,
            id: field("id")?,
            text: field("text")?,
            gold: field("gold_label")?,
        });
    }
    Ok(rows)
}

fn read_csv(file: File) -> Result<Vec<RawRow>> {
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest {
            row: 0,
            reason: format!("unreadable header: {e}"),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text").ok_or_else(|| Error::Ingest {
        row: 0,
        reason: "missing required column `text`".into(),
    })?;
    let (id_col, gold_col) = (col("id"), col("gold_label"));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            row,
            reason: e.to_string(),
        })?;
        let get = |c: Option<usize>| c.and_then(|c| record.get(c)).filter(|v| !v.is_empty()).map(str::to_string);
        rows.push(RawRow {
            row,
            id: get(id_col),
            text: get(Some(text_col)),
            gold: get(gold_col),
        });
    }
    Ok(rows)
}

fn build_samples(rows: Vec<RawRow>, schema: &LabelSchema) -> Result<Vec<Sample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(rows.len());
    for (index, raw) in rows.into_iter().enumerate() {
        let row = raw.row;
        let id = raw.id.unwrap_or_else(|| index.to_string());
        let text = raw.text.filter(|t| !t.trim().is_empty()).ok_or_else(|| Error::Ingest {
            row,
            reason: "empty or missing `text`".into(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::Ingest {
                row,
                reason: format!("duplicate id `{id}`"),
            });
        }
        let mut sample = Sample::new(id, text).map_err(|e| Error::Ingest {
            row,
            reason: e.to_string(),
        })?;
        if let Some(gold) = raw.gold {
            let label = schema.index_of(&gold).ok_or_else(|| Error::Ingest {
                row,
                reason: format!("gold label `{gold}` is not in the schema"),
            })?;
            sample = sample.with_gold(label);
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes samples as JSONL in the format [`ingest`] reads.
pub fn write_jsonl(path: &Path, samples: &[Sample], schema: &LabelSchema) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for s in samples {
        let mut obj = serde_json::json!({"id": s.id, "text": s.text});
        if let Some(g) = s.gold_label {
            obj["gold_label"] = Value::String(schema.name_of(g).to_string());
        }
        writeln!(out, "{obj}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::LabelId;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn jsonl_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.jsonl",
            "{\"id\":\"c\",\"text\":\"third?\"}\n{\"id\":\"a\",\"text\":\"one\",\"gold_label\":\"Negative\"}\n\n{\"id\":7,\"text\":\"two\"}\n",
        );
        let s = ingest(&p, None, &LabelSchema::sentiment()).unwrap();
        let ids: Vec<&str> = s.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "7"]);
        assert_eq!(s[1].gold_label, Some(LabelId(1)));
    }

    #[test]
    fn csv_with_and_without_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "text,gold_label\nhello,positive\n\"a, b\",\n");
        let s = ingest(&p, None, &LabelSchema::sentiment()).unwrap();
        assert_eq!((s[0].id.as_str(), s[1].id.as_str()), ("0", "1"));
        assert_eq!(s[1].text, "a, b");
        assert_eq!(s[1].gold_label, None);
    }

    #[test]
    fn csv_without_text_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "id,body\n1,hello\n");
        assert!(matches!(ingest(&p, None, &LabelSchema::sentiment()), Err(Error::Ingest { row: 0, .. })));
    }

    #[test]
    fn duplicate_id_reports_later_row() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (1..=8)
            .map(|i| {
                let id = if i == 7 { 2 } else { i };
                format!("{{\"id\":\"s{id}\",\"text\":\"t{i}\"}}\n")
            })
            .collect();
        let p = write(dir.path(), "d.jsonl", &body);
        match ingest(&p, None, &LabelSchema::sentiment()) {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_text_and_unknown_gold() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.jsonl", "{\"text\":\"ok\"}\n{\"text\":\"  \"}\n");
        assert!(matches!(ingest(&p, None, &LabelSchema::sentiment()), Err(Error::Ingest { row: 2, .. })));
        let p = write(dir.path(), "e.jsonl", "{\"text\":\"ok\",\"gold_label\":\"meh\"}\n");
        assert!(matches!(ingest(&p, None, &LabelSchema::sentiment()), Err(Error::Ingest { row: 1, .. })));
        let p = write(dir.path(), "f.txt", "");
        assert!(matches!(ingest(&p, None, &LabelSchema::sentiment()), Err(Error::Config(_))));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let schema = LabelSchema::toxicity();
        let samples = vec![
            Sample::new("x", "a").unwrap().with_gold(LabelId(1)),
            Sample::new("y", "b").unwrap(),
        ];
        let p = dir.path().join("o.jsonl");
        write_jsonl(&p, &samples, &schema).unwrap();
        assert_eq!(ingest(&p, Some(Format::Jsonl), &schema).unwrap(), samples);
    }
}
