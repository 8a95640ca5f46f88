//! Delimited-table and line-delimited JSON ingestion of annotation records.
//!
//! Column names: `text_id,text,annotator_id,worktime_s,annotator_throughput,
//! qualification,label_<name>...,gold_<target>`. `qualification`, the target's
//! `label_` column and the gold column are optional.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Dataset, LabelSchema, Qualification, TextUnit};
use crate::error::{Error, Result};

const REQUIRED: [&str; 5] = ["text_id", "text", "annotator_id", "worktime_s", "annotator_throughput"];
const LABEL_PREFIX: &str = "label_";
const GOLD_PREFIX: &str = "gold_";

/// How to read the label columns of an annotation table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub target: String,
    /// Auxiliary labels in encoding order. `None` takes every `label_` column
    /// other than the target, in header order.
    pub aux: Option<Vec<String>>,
}

impl SchemaSpec {
    pub fn new(target: impl Into<String>) -> Self {
        SchemaSpec { target: target.into(), aux: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Result of ingestion: the valid rows as a dataset plus per-line errors for
/// rows that were skipped.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub row_errors: Vec<RowError>,
    pub rows_read: usize,
}

/// Reads a `.csv` table or a `.jsonl` record file.
pub fn ingest_dataset(path: impl AsRef<Path>, schema: &SchemaSpec) -> Result<Ingested> {
    let path = path.as_ref();
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );
    let file = File::open(path)?;
    if is_jsonl {
        ingest_jsonl(BufReader::new(file), schema)
    } else {
        ingest_csv(file, schema)
    }
}

/// Ingests and fails on any row error.
pub fn read_dataset(path: impl AsRef<Path>, schema: &SchemaSpec) -> Result<Dataset> {
    let ing = ingest_dataset(path, schema)?;
    match ing.row_errors.into_iter().next() {
        Some(e) => Err(Error::Row { line: e.line, message: e.message }),
        None => Ok(ing.dataset),
    }
}

pub fn ingest_csv<R: std::io::Read>(reader: R, schema: &SchemaSpec) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut builder = Builder::new(&header, schema)?;
    let mut rec = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map_or(line, |p| p.line());
                if rec.len() != header.len() {
                    builder.errors.push(RowError {
                        line,
                        message: format!("expected {} fields, found {}", header.len(), rec.len()),
                    });
                    builder.rows += 1;
                    continue;
                }
                let cells: Vec<&str> = rec.iter().collect();
                builder.push(line, &cells);
            }
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                builder.errors.push(RowError { line, message: e.to_string() });
                builder.rows += 1;
            }
        }
    }
    builder.finish()
}

pub fn ingest_jsonl<R: BufRead>(reader: R, schema: &SchemaSpec) -> Result<Ingested> {
    let mut rows: Vec<(u64, serde_json::Map<String, serde_json::Value>)> = Vec::new();
    let mut errors = Vec::new();
    let mut header: Vec<String> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line) {
            Ok(obj) => {
                for k in obj.keys() {
                    if !header.contains(k) {
                        header.push(k.clone());
                    }
                }
                rows.push((line_no, obj));
            }
            Err(e) => errors.push(RowError { line: line_no, message: format!("invalid JSON: {e}") }),
        }
    }
    let mut builder = Builder::new(&header, schema)?;
    builder.rows += errors.len();
    builder.errors = errors;
    for (line, obj) in rows {
        let cells: Vec<String> = header
            .iter()
            .map(|h| match obj.get(h) {
                None | Some(serde_json::Value::Null) => String::new(),
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
            })
            .collect();
        let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        builder.push(line, &refs);
    }
    builder.errors.sort_by_key(|e| e.line);
    builder.finish()
}

struct Builder {
    col: HashMap<&'static str, usize>,
    label_cols: Vec<(String, usize)>,
    gold_col: Option<usize>,
    schema: LabelSchema,
    texts: Vec<TextUnit>,
    text_pos: HashMap<String, usize>,
    records: Vec<AnnotationRecord>,
    gold: BTreeMap<String, i64>,
    errors: Vec<RowError>,
    rows: usize,
}

impl Builder {
    fn new(header: &[String], spec: &SchemaSpec) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut col = HashMap::new();
        let mut missing = Vec::new();
        for name in REQUIRED {
            match find(name) {
                Some(i) => {
                    col.insert(name, i);
                }
                None => missing.push(name.to_string()),
            }
        }
        if let Some(i) = find("qualification") {
            col.insert("qualification", i);
        }
        let header_labels: Vec<(String, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(LABEL_PREFIX).map(|n| (n.to_string(), i)))
            .collect();
        let aux: Vec<String> = match &spec.aux {
            Some(a) => a.clone(),
            None => header_labels
                .iter()
                .filter(|(n, _)| n != &spec.target)
                .map(|(n, _)| n.clone())
                .collect(),
        };
        for a in &aux {
            if !header_labels.iter().any(|(n, _)| n == a) {
                missing.push(format!("{LABEL_PREFIX}{a}"));
            }
        }
        let gold_name = format!("{GOLD_PREFIX}{}", spec.target);
        if !header_labels.iter().any(|(n, _)| n == &spec.target) && find(&gold_name).is_none() {
            missing.push(format!("{LABEL_PREFIX}{} or {gold_name}", spec.target));
        }
        if !missing.is_empty() {
            return Err(Error::Schema(format!("missing column(s): {}", missing.join(", "))));
        }
        if aux.is_empty() {
            return Err(Error::Schema("no auxiliary label columns".into()));
        }
        let label_cols = header_labels
            .into_iter()
            .filter(|(n, _)| n == &spec.target || aux.contains(n))
            .collect();
        let gold_col = find(&gold_name);
        Ok(Builder {
            col,
            label_cols,
            gold_col,
            schema: LabelSchema::new(spec.target.clone(), aux),
            texts: Vec::new(),
            text_pos: HashMap::new(),
            records: Vec::new(),
            gold: BTreeMap::new(),
            errors: Vec::new(),
            rows: 0,
        })
    }

    fn push(&mut self, line: u64, cells: &[&str]) {
        self.rows += 1;
        if let Err(message) = self.parse_row(cells) {
            self.errors.push(RowError { line, message });
        }
    }

    fn parse_row(&mut self, cells: &[&str]) -> std::result::Result<(), String> {
        let get = |name: &str| self.col.get(name).map(|&i| cells[i]);
        let text_id = get("text_id").unwrap_or_default().trim().to_string();
        if text_id.is_empty() {
            return Err("empty text_id".into());
        }
        let text = get("text").unwrap_or_default().to_string();
        if text.is_empty() {
            return Err(format!("empty text for '{text_id}'"));
        }
        let annotator_id = get("annotator_id").unwrap_or_default().trim().to_string();
        if annotator_id.is_empty() {
            return Err("empty annotator_id".into());
        }
        let wt_raw = get("worktime_s").unwrap_or_default().trim();
        let worktime_s: f64 = wt_raw
            .parse()
            .map_err(|_| format!("worktime_s '{wt_raw}' is not numeric"))?;
        if !(worktime_s.is_finite() && worktime_s > 0.0) {
            return Err(format!("worktime_s must be > 0, got {wt_raw}"));
        }
        let tp_raw = get("annotator_throughput").unwrap_or_default().trim();
        let annotator_throughput = parse_count(tp_raw)
            .ok_or_else(|| format!("annotator_throughput '{tp_raw}' is not numeric"))?;
        if annotator_throughput < 1 {
            return Err("annotator_throughput must be >= 1".into());
        }
        let qualification = match get("qualification") {
            Some(q) => Qualification::parse(q).ok_or_else(|| format!("unknown qualification '{q}'"))?,
            None => Qualification::Unknown,
        };
        let mut labels = BTreeMap::new();
        for (name, i) in &self.label_cols {
            let raw = cells[*i].trim();
            if raw.is_empty() {
                continue;
            }
            let v = parse_label(raw).ok_or_else(|| format!("label_{name} '{raw}' is not an integer"))?;
            labels.insert(name.clone(), v);
        }
        let gold = match self.gold_col {
            Some(i) if !cells[i].trim().is_empty() => {
                let raw = cells[i].trim();
                Some(parse_label(raw).ok_or_else(|| format!("gold value '{raw}' is not an integer"))?)
            }
            _ => None,
        };
        if let Some(&pos) = self.text_pos.get(&text_id) {
            if self.texts[pos].text != text {
                return Err(format!("text for '{text_id}' differs from an earlier row"));
            }
        }
        if let (Some(g), Some(prev)) = (gold, self.gold.get(&text_id)) {
            if *prev != g {
                return Err(format!("conflicting gold value for '{text_id}'"));
            }
        }
        if !self.text_pos.contains_key(&text_id) {
            self.text_pos.insert(text_id.clone(), self.texts.len());
            self.texts.push(TextUnit { text_id: text_id.clone(), text });
        }
        if let Some(g) = gold {
            self.gold.insert(text_id.clone(), g);
        }
        self.records.push(AnnotationRecord {
            text_id,
            annotator_id,
            labels,
            worktime_s,
            annotator_throughput,
            qualification,
        });
        Ok(())
    }

    fn finish(self) -> Result<Ingested> {
        let dataset = Dataset::new(self.texts, self.records, self.schema, self.gold)?;
        Ok(Ingested { dataset, row_errors: self.errors, rows_read: self.rows })
    }
}

fn parse_count(s: &str) -> Option<u64> {
    s.parse::<u64>().ok().or_else(|| {
        let f: f64 = s.parse().ok()?;
        (f.is_finite() && f >= 0.0 && f.fract() == 0.0).then_some(f as u64)
    })
}

fn parse_label(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        let f: f64 = s.parse().ok()?;
        (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
    })
}

/// Writes the canonical annotation table. Reading it back with the same
/// schema reproduces the dataset exactly.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let schema = dataset.schema();
    let has_target_votes = dataset.records().iter().any(|r| r.labels.contains_key(&schema.target));
    let has_gold = !dataset.gold().is_empty();
    let mut label_names: Vec<&str> = schema.aux.iter().map(String::as_str).collect();
    if has_target_votes {
        label_names.push(&schema.target);
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.push("qualification".into());
    header.extend(label_names.iter().map(|n| format!("{LABEL_PREFIX}{n}")));
    if has_gold {
        header.push(format!("{GOLD_PREFIX}{}", schema.target));
    }
    w.write_record(&header)?;
    for (ti, text) in dataset.texts().iter().enumerate() {
        let gold = dataset.gold().get(&text.text_id).map(|g| g.to_string()).unwrap_or_default();
        for rec in dataset.records_for(ti) {
            let mut row = vec![
                rec.text_id.clone(),
                text.text.clone(),
                rec.annotator_id.clone(),
                rec.worktime_s.to_string(),
                rec.annotator_throughput.to_string(),
                rec.qualification.as_str().to_string(),
            ];
            for n in &label_names {
                row.push(rec.labels.get(*n).map(|v| v.to_string()).unwrap_or_default());
            }
            if has_gold {
                row.push(gold.clone());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
