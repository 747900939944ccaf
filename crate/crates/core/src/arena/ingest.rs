use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::{Format, OutcomeSpec, Schema};
use super::{Arena, Matchup, Metadata, ModelRegistry};
use crate::error::{Error, Result};

/// Row accounting for one ingest: `decisive + ties + malformed_skipped == source_rows`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub source_rows: usize,
    pub decisive: usize,
    pub ties: usize,
    pub malformed_skipped: usize,
}

enum Outcome {
    AWins,
    BWins,
    Tie,
}

enum RowError {
    Malformed(String),
    UnknownLabel(String),
}

/// Column lookup over one source row.
trait Row {
    fn field(&self, column: &str) -> Option<String>;
}

struct CsvRow<'a> {
    headers: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl Row for CsvRow<'_> {
    fn field(&self, column: &str) -> Option<String> {
        let idx = self.headers.iter().position(|h| h == column)?;
        self.record.get(idx).map(str::to_owned)
    }
}

struct JsonRow(serde_json::Map<String, Value>);

impl Row for JsonRow {
    fn field(&self, column: &str) -> Option<String> {
        match self.0.get(column)? {
            Value::Null => None,
            Value::String(s) => Some(s.clone()),
            Value::Bool(b) => Some(b.to_string()),
            Value::Number(n) => Some(n.to_string()),
            other => Some(other.to_string()),
        }
    }
}

fn truthy(value: &str) -> Option<bool> {
    match value.trim() {
        "1" | "1.0" | "true" | "True" | "TRUE" => Some(true),
        "0" | "0.0" | "false" | "False" | "FALSE" | "" => Some(false),
        _ => None,
    }
}

fn classify(schema: &Schema, row: &dyn Row) -> std::result::Result<Outcome, RowError> {
    match &schema.outcome {
        OutcomeSpec::Label { column, a_wins, b_wins, ties } => {
            let raw = row
                .field(column)
                .ok_or_else(|| RowError::Malformed(format!("missing outcome column {column:?}")))?;
            let label = raw.trim();
            if a_wins.iter().any(|l| l == label) {
                Ok(Outcome::AWins)
            } else if b_wins.iter().any(|l| l == label) {
                Ok(Outcome::BWins)
            } else if ties.iter().any(|l| l == label) {
                Ok(Outcome::Tie)
            } else {
                Err(RowError::UnknownLabel(label.to_owned()))
            }
        }
        OutcomeSpec::OneHot { a_wins, b_wins, tie } => {
            let flag = |col: &str| -> std::result::Result<bool, RowError> {
                let raw = row.field(col).ok_or_else(|| {
                    RowError::Malformed(format!("missing outcome column {col:?}"))
                })?;
                truthy(&raw).ok_or_else(|| {
                    RowError::Malformed(format!("column {col:?} is not an indicator: {raw:?}"))
                })
            };
            match (flag(a_wins)?, flag(b_wins)?, flag(tie)?) {
                (true, false, false) => Ok(Outcome::AWins),
                (false, true, false) => Ok(Outcome::BWins),
                (false, false, true) => Ok(Outcome::Tie),
                _ => {
                    Err(RowError::Malformed("outcome indicators must have exactly one set".into()))
                }
            }
        }
    }
}

struct Builder<'s> {
    schema: &'s Schema,
    registry: ModelRegistry,
    matchups: Vec<Matchup>,
    metadata: Vec<Metadata>,
    stats: IngestStats,
}

impl<'s> Builder<'s> {
    fn new(schema: &'s Schema) -> Result<Self> {
        let mut registry = ModelRegistry::new();
        if let Some(reference) = &schema.reference {
            registry.intern(reference)?;
        }
        Ok(Self {
            schema,
            registry,
            matchups: Vec::new(),
            metadata: Vec::new(),
            stats: IngestStats::default(),
        })
    }

    fn malformed(&mut self, row: usize, reason: String) -> Result<()> {
        if self.schema.skip_malformed {
            log::debug!("skipping malformed row {row}: {reason}");
            self.stats.malformed_skipped += 1;
            Ok(())
        } else {
            Err(Error::MalformedRow { row, reason })
        }
    }

    fn push(&mut self, row_no: usize, row: &dyn Row) -> Result<()> {
        self.stats.source_rows += 1;
        let a = row.field(&self.schema.model_a).map(|s| s.trim().to_owned());
        let b = row.field(&self.schema.model_b).map(|s| s.trim().to_owned());
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => (a, b),
            _ => return self.malformed(row_no, "missing or empty model column".into()),
        };
        if a == b {
            return self.malformed(row_no, format!("model {a:?} compared against itself"));
        }
        let outcome = match classify(self.schema, row) {
            Ok(o) => o,
            Err(RowError::Malformed(reason)) => return self.malformed(row_no, reason),
            Err(RowError::UnknownLabel(label)) => {
                if self.schema.skip_malformed {
                    return self.malformed(row_no, format!("unknown outcome label {label:?}"));
                }
                return Err(Error::UnknownOutcome { row: row_no, label });
            }
        };
        let a_won = match outcome {
            Outcome::Tie => {
                self.stats.ties += 1;
                return Ok(());
            }
            Outcome::AWins => true,
            Outcome::BWins => false,
        };
        let a = self.registry.intern(&a)?;
        let b = self.registry.intern(&b)?;
        self.matchups.push(Matchup::new(a, b, a_won));
        if !self.schema.metadata.is_empty() {
            let meta = self
                .schema
                .metadata
                .iter()
                .filter_map(|col| row.field(col).map(|v| (col.clone(), v)))
                .collect();
            self.metadata.push(meta);
        }
        self.stats.decisive += 1;
        Ok(())
    }

    fn finish(self) -> Result<Arena> {
        if self.matchups.is_empty() {
            return Err(Error::NoDecisiveMatchups);
        }
        if let Some(reference) = &self.schema.reference {
            if !self.matchups.iter().any(|m| m.a.is_reference() || m.b.is_reference()) {
                return Err(Error::UnknownModel(reference.clone()));
            }
        }
        let metadata = (!self.schema.metadata.is_empty()).then_some(self.metadata);
        Arena::with_parts(self.registry, self.matchups, metadata, self.stats)
    }
}

/// Reads a preference dataset, keeping decisive matchups in source order.
///
/// Tie rows (including "both bad" labels) are dropped and counted. Models are
/// indexed in order of first appearance among decisive rows, except that a
/// reference model named in the schema always takes index 0. Row numbers in
/// errors are 1-based data rows (header excluded; blank JSON lines skipped).
pub fn ingest<R: Read>(source: R, schema: &Schema) -> Result<Arena> {
    schema.validate()?;
    let mut builder = Builder::new(schema)?;
    match schema.format {
        Format::Csv | Format::Tsv => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(schema.delimiter_byte()?)
                .flexible(true)
                .from_reader(source);
            let headers = reader.headers()?.clone();
            let mut record = csv::StringRecord::new();
            let mut row_no = 0;
            loop {
                row_no += 1;
                match reader.read_record(&mut record) {
                    Ok(true) => {
                        builder.push(row_no, &CsvRow { headers: &headers, record: &record })?
                    }
                    Ok(false) => break,
                    Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                        builder.stats.source_rows += 1;
                        builder.malformed(row_no, e.to_string())?;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Format::Jsonl => {
            let mut row_no = 0;
            for line in BufReader::new(source).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                row_no += 1;
                match serde_json::from_str::<Value>(&line) {
                    Ok(Value::Object(map)) => builder.push(row_no, &JsonRow(map))?,
                    Ok(_) => {
                        builder.stats.source_rows += 1;
                        builder.malformed(row_no, "record is not a JSON object".into())?;
                    }
                    Err(e) => {
                        builder.stats.source_rows += 1;
                        builder.malformed(row_no, e.to_string())?;
                    }
                }
            }
        }
    }
    builder.finish()
}

pub fn ingest_path(path: impl AsRef<Path>, schema: &Schema) -> Result<Arena> {
    ingest(File::open(path)?, schema)
}
