//! In-memory tables and the on-disk dataset format.
//!
//! A dataset directory holds one `<table>.csv` per table (header row first)
//! and a `<table>.schema.json` sidecar with the column types:
//! `{"columns": [{"name": "id", "type": "integer"}, ...]}`. Empty fields are
//! read as NULL.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use semplan_core::ir::{Catalog, ColumnRef, TableSchema};
use semplan_core::{ColumnType, Value};

pub type Row = Vec<Value>;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}, line {line}: column `{column}` expects {ty}, found `{text}`")]
    BadValue {
        path: PathBuf,
        line: u64,
        column: String,
        ty: ColumnType,
        text: String,
    },
    #[error("{path}: header {found:?} does not match schema columns {expected:?}")]
    Header {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("table `{0}` has no schema sidecar")]
    MissingSchema(String),
    #[error("table `{table}` row {row} has {found} values for {expected} columns")]
    Arity {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// A base table: schema plus rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(schema: TableSchema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.columns.iter().position(|c| c.name == name)
    }

    /// Checks arity and value types.
    pub fn check(&self, name: &str) -> Result<(), DataError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.schema.columns.len() {
                return Err(DataError::Arity {
                    table: name.to_string(),
                    row: i,
                    expected: self.schema.columns.len(),
                    found: row.len(),
                });
            }
        }
        Ok(())
    }
}

/// Named base tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub tables: BTreeMap<String, Table>,
}

impl Dataset {
    pub fn catalog(&self) -> Catalog {
        self.tables.iter().map(|(n, t)| (n.clone(), t.schema.clone())).collect()
    }

    pub fn insert(&mut self, name: impl Into<String>, table: Table) {
        self.tables.insert(name.into(), table);
    }

    /// Reads every `<name>.csv` with a sidecar schema in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, DataError> {
        let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| DataError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        let mut out = Dataset::default();
        for name in names {
            let schema_path = dir.join(format!("{name}.schema.json"));
            if !schema_path.exists() {
                return Err(DataError::MissingSchema(name));
            }
            let schema = read_schema(&schema_path)?;
            let table = read_csv(&dir.join(format!("{name}.csv")), schema)?;
            out.insert(name, table);
        }
        Ok(out)
    }

    /// Writes the dataset in the directory format. Output is byte-identical
    /// for identical datasets.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, table) in &self.tables {
            let schema_path = dir.join(format!("{name}.schema.json"));
            let text = serde_json::to_string_pretty(&table.schema).map_err(|source| DataError::Json {
                path: schema_path.clone(),
                source,
            })?;
            fs::write(&schema_path, text + "\n").map_err(|source| DataError::Io {
                path: schema_path,
                source,
            })?;
            write_csv(&dir.join(format!("{name}.csv")), table)?;
        }
        Ok(())
    }
}

pub fn read_schema(path: &Path) -> Result<TableSchema, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses one CSV field. Empty text is NULL.
pub fn parse_value(text: &str, ty: ColumnType) -> Option<Value> {
    if text.is_empty() {
        return Some(Value::Null);
    }
    match ty {
        ColumnType::Text => Some(Value::Text(text.to_string())),
        ColumnType::Integer => text.trim().parse().ok().map(Value::Integer),
        ColumnType::Float => text.trim().parse().ok().map(Value::Float),
        ColumnType::Boolean => match text.trim().to_ascii_lowercase().as_str() {
            "true" | "t" | "1" => Some(Value::Boolean(true)),
            "false" | "f" | "0" => Some(Value::Boolean(false)),
            _ => None,
        },
    }
}

/// CSV text of a value; NULL is the empty field.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        other => other.canonical_text(),
    }
}

pub fn read_csv(path: &Path, schema: TableSchema) -> Result<Table, DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let expected: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            expected,
            found: header,
        });
    }
    let mut table = Table::new(schema);
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(record.len());
        for (field, col) in record.iter().zip(&table.schema.columns) {
            let v = parse_value(field, col.ty).ok_or_else(|| DataError::BadValue {
                path: path.to_path_buf(),
                line,
                column: col.name.clone(),
                ty: col.ty,
                text: field.to_string(),
            })?;
            row.push(v);
        }
        table.rows.push(row);
    }
    Ok(table)
}

pub fn write_csv(path: &Path, table: &Table) -> Result<(), DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    writer
        .write_record(table.schema.columns.iter().map(|c| c.name.as_str()))
        .map_err(csv_err)?;
    for row in &table.rows {
        writer.write_record(row.iter().map(format_value)).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// An intermediate or final result: named columns and rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Relation {
    pub columns: Vec<ColumnRef>,
    pub rows: Vec<Row>,
}

impl Relation {
    pub fn index_of(&self, col: &ColumnRef) -> Option<usize> {
        self.columns.iter().position(|c| c == col)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes rows as CSV under the given header names.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        // Writing into memory cannot fail.
        writer.write_record(names).expect("in-memory csv");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(format_value))
                .expect("in-memory csv");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn people() -> Table {
        let mut t = Table::new(TableSchema::new([
            ("id", ColumnType::Integer),
            ("name", ColumnType::Text),
            ("score", ColumnType::Float),
            ("ok", ColumnType::Boolean),
        ]));
        t.rows.push(vec![
            1i64.into(),
            "ann, jr".into(),
            Value::Float(2.5),
            Value::Boolean(true),
        ]);
        t.rows
            .push(vec![2i64.into(), Value::Null, Value::Null, Value::Boolean(false)]);
        t
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::default();
        ds.insert("people", people());
        ds.insert("empty", Table::new(TableSchema::new([("x", ColumnType::Integer)])));
        ds.write_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(back, ds);
        let text = fs::read_to_string(dir.path().join("empty.csv")).unwrap();
        assert_eq!(text, "x\n");
    }

    #[test]
    fn bad_value_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "id\n1\nx\n").unwrap();
        let err = read_csv(&path, TableSchema::new([("id", ColumnType::Integer)])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("`id`"), "{msg}");
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = read_csv(&path, TableSchema::new([("a", ColumnType::Integer)])).unwrap_err();
        assert!(matches!(err, DataError::Header { .. }));
    }
}
