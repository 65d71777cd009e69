//! CSV (header row, `.` decimal) and JSON-lines dataset files.
//!
//! Row numbers in errors are 1-based data rows; the CSV header is not counted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::record::InstanceRecord;
use crate::data::schema::{CategoricalField, FeatureSchema, GROUP_KEY_COLUMN, TRUE_ITE_COLUMN};
use crate::error::{Error, Result};

/// What to do with a categorical level outside `0..cardinality`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    #[default]
    Strict,
    /// Map unknown levels onto index 0.
    ReservedZero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub oov: OovPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    JsonLines,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => DataFormat::JsonLines,
            _ => DataFormat::Csv,
        }
    }
}

pub fn load_dataset(path: &Path, schema: &FeatureSchema, options: LoadOptions) -> Result<Vec<InstanceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), DataFormat::from_path(path), schema, options)
}

pub fn save_dataset(path: &Path, schema: &FeatureSchema, records: &[InstanceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, DataFormat::from_path(path), schema, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset<R: Read>(
    reader: R,
    format: DataFormat,
    schema: &FeatureSchema,
    options: LoadOptions,
) -> Result<Vec<InstanceRecord>> {
    schema.validate()?;
    match format {
        DataFormat::Csv => read_csv(reader, schema, options),
        DataFormat::JsonLines => read_jsonl(reader, schema, options),
    }
}

pub fn write_dataset<W: Write>(
    writer: W,
    format: DataFormat,
    schema: &FeatureSchema,
    records: &[InstanceRecord],
) -> Result<()> {
    match format {
        DataFormat::Csv => write_csv(writer, schema, records),
        DataFormat::JsonLines => write_jsonl(writer, schema, records),
    }
}

fn categorical(raw: i64, field: &CategoricalField, row: usize, options: LoadOptions) -> Result<usize> {
    if raw >= 0 && (raw as usize) < field.cardinality {
        return Ok(raw as usize);
    }
    match options.oov {
        OovPolicy::ReservedZero => Ok(0),
        OovPolicy::Strict => Err(Error::Oov {
            row,
            field: field.name.clone(),
            value: raw,
            cardinality: field.cardinality,
        }),
    }
}

/// Field accessor shared by both readers.
trait RowSource {
    fn integer(&self, name: &str, row: usize) -> Result<i64>;
    fn real(&self, name: &str, row: usize) -> Result<f64>;
    fn optional_real(&self, name: &str, row: usize) -> Result<Option<f64>>;
    fn optional_text(&self, name: &str) -> Option<String>;
}

fn build_record(src: &dyn RowSource, schema: &FeatureSchema, row: usize, options: LoadOptions) -> Result<InstanceRecord> {
    let cats = |fields: &[CategoricalField]| -> Result<Vec<usize>> {
        fields
            .iter()
            .map(|f| categorical(src.integer(&f.name, row)?, f, row, options))
            .collect()
    };
    let nums = |names: &[String]| -> Result<Vec<f64>> { names.iter().map(|n| src.real(n, row)).collect() };
    let record = InstanceRecord {
        merchant_cat: cats(&schema.merchant_categorical)?,
        merchant_num: nums(&schema.merchant_numeric)?,
        context_cat: cats(&schema.context_categorical)?,
        context_num: nums(&schema.context_numeric)?,
        treatment: src.real(&schema.treatment_name, row)?,
        outcome: src.real(&schema.outcome_name, row)?,
        true_ite: src.optional_real(TRUE_ITE_COLUMN, row)?,
        group_key: src.optional_text(GROUP_KEY_COLUMN),
    };
    record.validate(schema, row)?;
    Ok(record)
}

struct CsvRow<'a> {
    columns: &'a HashMap<String, usize>,
    fields: &'a csv::StringRecord,
}

impl CsvRow<'_> {
    fn raw(&self, name: &str) -> Option<&str> {
        self.columns.get(name).and_then(|&i| self.fields.get(i)).map(str::trim)
    }
}

impl RowSource for CsvRow<'_> {
    fn integer(&self, name: &str, row: usize) -> Result<i64> {
        let raw = self.raw(name).unwrap_or_default();
        raw.parse().map_err(|_| Error::Parse {
            row,
            message: format!("column `{name}`: `{raw}` is not an integer level"),
        })
    }

    fn real(&self, name: &str, row: usize) -> Result<f64> {
        let raw = self.raw(name).unwrap_or_default();
        raw.parse().map_err(|_| Error::Parse {
            row,
            message: format!("column `{name}`: `{raw}` is not a number"),
        })
    }

    fn optional_real(&self, name: &str, row: usize) -> Result<Option<f64>> {
        match self.raw(name) {
            None | Some("") => Ok(None),
            Some(_) => self.real(name, row).map(Some),
        }
    }

    fn optional_text(&self, name: &str) -> Option<String> {
        self.raw(name).filter(|s| !s.is_empty()).map(str::to_string)
    }
}

fn read_csv<R: Read>(reader: R, schema: &FeatureSchema, options: LoadOptions) -> Result<Vec<InstanceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let columns: HashMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    for name in schema.column_names() {
        if !columns.contains_key(name) {
            return Err(Error::Schema(format!("missing column `{name}`")));
        }
    }
    let mut out = Vec::new();
    for (i, fields) in rdr.records().enumerate() {
        let fields = fields?;
        let src = CsvRow {
            columns: &columns,
            fields: &fields,
        };
        out.push(build_record(&src, schema, i + 1, options)?);
    }
    Ok(out)
}

struct JsonRow<'a>(&'a Map<String, Value>);

impl RowSource for JsonRow<'_> {
    fn integer(&self, name: &str, row: usize) -> Result<i64> {
        let v = self.0.get(name);
        v.and_then(|v| v.as_i64().or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)))
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("field `{name}`: expected an integer level, got {v:?}"),
            })
    }

    fn real(&self, name: &str, row: usize) -> Result<f64> {
        self.0.get(name).and_then(Value::as_f64).ok_or_else(|| Error::Parse {
            row,
            message: format!("field `{name}`: expected a number"),
        })
    }

    fn optional_real(&self, name: &str, row: usize) -> Result<Option<f64>> {
        match self.0.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.real(name, row).map(Some),
        }
    }

    fn optional_text(&self, name: &str) -> Option<String> {
        self.0.get(name).and_then(Value::as_str).map(str::to_string)
    }
}

fn read_jsonl<R: Read>(reader: R, schema: &FeatureSchema, options: LoadOptions) -> Result<Vec<InstanceRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            row,
            message: "expected a JSON object".into(),
        })?;
        for name in schema.column_names() {
            if !obj.contains_key(name) {
                return Err(Error::Schema(format!("missing column `{name}` (row {row})")));
            }
        }
        out.push(build_record(&JsonRow(obj), schema, row, options)?);
    }
    Ok(out)
}

fn optional_columns(records: &[InstanceRecord]) -> (bool, bool) {
    (
        records.iter().any(|r| r.true_ite.is_some()),
        records.iter().any(|r| r.group_key.is_some()),
    )
}

fn write_csv<W: Write>(writer: W, schema: &FeatureSchema, records: &[InstanceRecord]) -> Result<()> {
    let (with_ite, with_group) = optional_columns(records);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.column_names();
    if with_ite {
        header.push(TRUE_ITE_COLUMN);
    }
    if with_group {
        header.push(GROUP_KEY_COLUMN);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        row.extend(r.merchant_cat.iter().map(|v| v.to_string()));
        row.extend(r.merchant_num.iter().map(|v| v.to_string()));
        row.extend(r.context_cat.iter().map(|v| v.to_string()));
        row.extend(r.context_num.iter().map(|v| v.to_string()));
        row.push(r.treatment.to_string());
        row.push(r.outcome.to_string());
        if with_ite {
            row.push(r.true_ite.map(|v| v.to_string()).unwrap_or_default());
        }
        if with_group {
            row.push(r.group_key.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

fn write_jsonl<W: Write>(mut writer: W, schema: &FeatureSchema, records: &[InstanceRecord]) -> Result<()> {
    for r in records {
        let mut obj = Map::new();
        for (v, f) in r.merchant_cat.iter().zip(&schema.merchant_categorical) {
            obj.insert(f.name.clone(), Value::from(*v));
        }
        for (v, n) in r.merchant_num.iter().zip(&schema.merchant_numeric) {
            obj.insert(n.clone(), Value::from(*v));
        }
        for (v, f) in r.context_cat.iter().zip(&schema.context_categorical) {
            obj.insert(f.name.clone(), Value::from(*v));
        }
        for (v, n) in r.context_num.iter().zip(&schema.context_numeric) {
            obj.insert(n.clone(), Value::from(*v));
        }
        obj.insert(schema.treatment_name.clone(), Value::from(r.treatment));
        obj.insert(schema.outcome_name.clone(), Value::from(r.outcome));
        if let Some(ite) = r.true_ite {
            obj.insert(TRUE_ITE_COLUMN.into(), Value::from(ite));
        }
        if let Some(g) = &r.group_key {
            obj.insert(GROUP_KEY_COLUMN.into(), Value::from(g.clone()));
        }
        serde_json::to_writer(&mut writer, &obj)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}
