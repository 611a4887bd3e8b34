//! Declarative synthetic datasets.
//!
//! A [`WorkloadSpec`] lists tables with row counts and a generator per
//! column. Generators are deterministic given the workload seed, and key
//! columns built from `cycle` segments give exact control over join fan-out
//! and over how many distinct rows survive a join.
//!
//! Index conventions: `serial` and `label` use the row's position in the
//! table; `cycle` uses the position within its segment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semplan_core::ir::TableSchema;
use semplan_core::{ColumnType, Value};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Table};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub tables: Vec<TableSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: usize,
    /// Permute rows after generation (counts are unaffected).
    #[serde(default)]
    pub shuffle: bool,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(rename = "gen")]
    pub generator: Gen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub rows: usize,
    #[serde(rename = "gen")]
    pub generator: Gen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gen {
    /// `start + row`.
    Serial {
        #[serde(default)]
        start: i64,
    },
    /// `offset + (i mod distinct)`: exactly `distinct` values, each repeated
    /// as evenly as possible.
    Cycle {
        distinct: usize,
        #[serde(default)]
        offset: i64,
    },
    /// Uniform integer in `[min, max]`.
    Uniform {
        min: i64,
        max: i64,
    },
    /// `"{prefix} {row}"`, distinct per row.
    Label {
        prefix: String,
    },
    /// Uniform pick from a list.
    Choice {
        values: Vec<Value>,
    },
    /// `"{prefix} {j}"` for `j` uniform in `0..distinct`.
    Pick {
        prefix: String,
        distinct: usize,
    },
    Null,
    /// Consecutive row blocks with their own generators.
    Segments {
        parts: Vec<Segment>,
    },
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("table `{table}`, column `{column}`: {message}")]
    Infeasible {
        table: String,
        column: String,
        message: String,
    },
    #[error("table `{0}` is declared twice")]
    DuplicateTable(String),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tables {
            if !seen.insert(&t.name) {
                return Err(WorkloadError::DuplicateTable(t.name.clone()));
            }
            for c in &t.columns {
                check(&c.generator, t.rows).map_err(|message| WorkloadError::Infeasible {
                    table: t.name.clone(),
                    column: c.name.clone(),
                    message,
                })?;
            }
        }
        Ok(())
    }

    /// Generates the dataset. A pure function of the workload description.
    pub fn generate(&self) -> Result<Dataset, WorkloadError> {
        self.validate()?;
        let mut out = Dataset::default();
        for (ti, t) in self.tables.iter().enumerate() {
            let schema = TableSchema {
                columns: t
                    .columns
                    .iter()
                    .map(|c| semplan_core::ir::ColumnDef {
                        name: c.name.clone(),
                        ty: c.ty,
                    })
                    .collect(),
            };
            let mut columns: Vec<Vec<Value>> = Vec::with_capacity(t.columns.len());
            for (ci, c) in t.columns.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, ti, ci));
                let mut values = Vec::with_capacity(t.rows);
                fill(&c.generator, 0, t.rows, &mut rng, &mut values);
                columns.push(values.into_iter().map(|v| cast(v, c.ty)).collect());
            }
            let mut rows: Vec<Vec<Value>> = (0..t.rows)
                .map(|r| {
                    columns
                        .iter_mut()
                        .map(|col| std::mem::replace(&mut col[r], Value::Null))
                        .collect()
                })
                .collect();
            if t.shuffle {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, ti, usize::MAX));
                rows.shuffle(&mut rng);
            }
            out.insert(t.name.clone(), Table { schema, rows });
        }
        Ok(out)
    }
}

fn stream_seed(seed: u64, table: usize, column: usize) -> u64 {
    seed ^ ((table as u64) << 32)
        .wrapping_add(column as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn check(g: &Gen, rows: usize) -> Result<(), String> {
    match g {
        Gen::Cycle { distinct, .. } => {
            if *distinct == 0 && rows > 0 {
                return Err("cycle needs at least one distinct value".into());
            }
            if *distinct > rows {
                return Err(format!("{distinct} distinct values do not fit in {rows} rows"));
            }
        }
        Gen::Uniform { min, max } if min > max => return Err(format!("empty range [{min}, {max}]")),
        Gen::Choice { values } if values.is_empty() && rows > 0 => return Err("choice list is empty".into()),
        Gen::Pick { distinct: 0, .. } if rows > 0 => return Err("pick needs at least one value".into()),
        Gen::Segments { parts } => {
            let total: usize = parts.iter().map(|p| p.rows).sum();
            if total != rows {
                return Err(format!("segments cover {total} rows, table has {rows}"));
            }
            for p in parts {
                check(&p.generator, p.rows)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn fill(g: &Gen, first_row: usize, rows: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Value>) {
    for i in 0..rows {
        let row = first_row + i;
        let v = match g {
            Gen::Serial { start } => Value::Integer(start + row as i64),
            Gen::Cycle { distinct, offset } => Value::Integer(offset + (i % distinct) as i64),
            Gen::Uniform { min, max } => Value::Integer(rng.random_range(*min..=*max)),
            Gen::Label { prefix } => Value::Text(format!("{prefix} {row}")),
            Gen::Choice { values } => values[rng.random_range(0..values.len())].clone(),
            Gen::Pick { prefix, distinct } => Value::Text(format!("{prefix} {}", rng.random_range(0..*distinct))),
            Gen::Null => Value::Null,
            Gen::Segments { parts } => {
                let mut start = first_row;
                for p in parts {
                    fill(&p.generator, start, p.rows, rng, out);
                    start += p.rows;
                }
                return;
            }
        };
        out.push(v);
    }
}

fn cast(v: Value, ty: ColumnType) -> Value {
    match (v, ty) {
        (Value::Null, _) => Value::Null,
        (v @ Value::Text(_), ColumnType::Text) => v,
        (v, ColumnType::Text) => Value::Text(v.canonical_text()),
        (Value::Integer(i), ColumnType::Float) => Value::Float(i as f64),
        (Value::Integer(i), ColumnType::Boolean) => Value::Boolean(i != 0),
        (v, _) => v,
    }
}
