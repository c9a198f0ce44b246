//! Fleet measurement data model: variable schema, per-flight records and
//! CSV ingestion.
//!
//! Records are always held sorted by engine id, then flight index. Each
//! engine owns a contiguous slice of the record vector, so the dense engine
//! index used by the linear model is simply the position of the engine in
//! [`FleetDataset::engines`].

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENGINE_ID_COLUMN: &str = "engine_id";
pub const FLIGHT_INDEX_COLUMN: &str = "flight_index";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("schema mismatch: {0}")]
    Column(String),
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("dataset is empty")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Names of the monitored engine variables and of the environmental covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    engine_var_names: Vec<String>,
    env_var_names: Vec<String>,
}

impl VariableSchema {
    pub fn new(
        engine_var_names: Vec<String>,
        env_var_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if engine_var_names.is_empty() {
            return Err(DatasetError::Schema(
                "at least one engine variable is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in engine_var_names.iter().chain(env_var_names.iter()) {
            if name.trim().is_empty() {
                return Err(DatasetError::Schema("empty variable label".into()));
            }
            if name == ENGINE_ID_COLUMN || name == FLIGHT_INDEX_COLUMN {
                return Err(DatasetError::Schema(format!("reserved label '{name}'")));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate label '{name}'")));
            }
        }
        Ok(Self {
            engine_var_names,
            env_var_names,
        })
    }

    /// The seven engine variables and thirteen environmental variables
    /// monitored on the reference fleet.
    pub fn standard() -> Self {
        let y = [
            "core_speed",
            "oil_pressure",
            "hpc_discharge_static_pressure",
            "hpc_discharge_temp",
            "exhaust_gas_temp",
            "oil_temp",
            "fuel_flow",
        ];
        let x = [
            "mach",
            "engine_bleed_valve_1",
            "engine_bleed_valve_2",
            "engine_bleed_valve_3",
            "engine_bleed_valve_4",
            "isolation_valve_left",
            "altitude",
            "hpt_active_clearance",
            "lpt_active_clearance",
            "total_air_temp",
            "nacelle_temp",
            "ecs_pack_1_flow",
            "ecs_pack_2_flow",
        ];
        Self {
            engine_var_names: y.iter().map(|s| s.to_string()).collect(),
            env_var_names: x.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.engine_var_names.len()
    }

    pub fn q(&self) -> usize {
        self.env_var_names.len()
    }

    pub fn engine_var_names(&self) -> &[String] {
        &self.engine_var_names
    }

    pub fn env_var_names(&self) -> &[String] {
        &self.env_var_names
    }

    /// CSV header: id columns followed by engine then environmental variables.
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec![ENGINE_ID_COLUMN.to_string(), FLIGHT_INDEX_COLUMN.to_string()];
        cols.extend(self.engine_var_names.iter().cloned());
        cols.extend(self.env_var_names.iter().cloned());
        cols
    }

    /// Short stable fingerprint of the variable labels and their order.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.engine_var_names {
            hasher.update(b"Y:");
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        for name in &self.env_var_names {
            hasher.update(b"X:");
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

impl Default for VariableSchema {
    fn default() -> Self {
        Self::standard()
    }
}

/// One flight's snapshot: engine measurements `y` and environmental covariates `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightRecord {
    pub engine_id: String,
    pub flight_index: u32,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineSlice {
    pub id: String,
    pub records: Range<usize>,
}

impl EngineSlice {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Immutable fleet dataset, records ordered by (engine id, flight index).
#[derive(Debug, Clone, PartialEq)]
pub struct FleetDataset {
    schema: VariableSchema,
    records: Vec<FlightRecord>,
    engines: Vec<EngineSlice>,
}

impl FleetDataset {
    /// Validates and sorts `records`. Fails on shape mismatches, non-finite
    /// values and duplicate (engine, flight) keys.
    pub fn new(schema: VariableSchema, mut records: Vec<FlightRecord>) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.y.len() != schema.p() || rec.x.len() != schema.q() {
                return Err(DatasetError::Integrity(format!(
                    "record {i} (engine {}, flight {}) has {} engine and {} environmental values, expected {} and {}",
                    rec.engine_id,
                    rec.flight_index,
                    rec.y.len(),
                    rec.x.len(),
                    schema.p(),
                    schema.q()
                )));
            }
            if let Some(v) = rec.y.iter().chain(rec.x.iter()).find(|v| !v.is_finite()) {
                return Err(DatasetError::Integrity(format!(
                    "record {i} (engine {}, flight {}) holds non-finite value {v}",
                    rec.engine_id, rec.flight_index
                )));
            }
        }
        records.sort_by(|a, b| {
            a.engine_id
                .cmp(&b.engine_id)
                .then(a.flight_index.cmp(&b.flight_index))
        });
        let mut engines: Vec<EngineSlice> = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            match engines.last_mut() {
                Some(last) if last.id == rec.engine_id => {
                    let prev = &records[i - 1];
                    if prev.flight_index == rec.flight_index {
                        return Err(DatasetError::Integrity(format!(
                            "duplicate record for engine {} flight {}",
                            rec.engine_id, rec.flight_index
                        )));
                    }
                    last.records.end = i + 1;
                }
                _ => engines.push(EngineSlice {
                    id: rec.engine_id.clone(),
                    records: i..i + 1,
                }),
            }
        }
        Ok(Self {
            schema,
            records,
            engines,
        })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn records(&self) -> &[FlightRecord] {
        &self.records
    }

    pub fn engines(&self) -> &[EngineSlice] {
        &self.engines
    }

    /// Number of engines, `I`.
    pub fn engine_count(&self) -> usize {
        self.engines.len()
    }

    /// Total number of records, `N`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn engine(&self, id: &str) -> Option<&EngineSlice> {
        self.engines
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.engines[i])
    }

    pub fn engine_records(&self, id: &str) -> Option<&[FlightRecord]> {
        self.engine(id).map(|e| &self.records[e.records.clone()])
    }

    /// Dense engine index of every record, parallel to [`Self::records`].
    pub fn engine_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for (i, e) in self.engines.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, e.len()));
        }
        out
    }

    pub fn y_column(&self, m: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.y[m]).collect()
    }

    pub fn x_column(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[k]).collect()
    }

    pub fn to_csv_string(&self) -> Result<String, DatasetError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.schema.header())?;
        let mut row: Vec<String> = Vec::with_capacity(2 + self.schema.p() + self.schema.q());
        for rec in &self.records {
            row.clear();
            row.push(rec.engine_id.clone());
            row.push(rec.flight_index.to_string());
            row.extend(rec.y.iter().map(|v| v.to_string()));
            row.extend(rec.x.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let file = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: &Path, schema: &VariableSchema) -> Result<Self, DatasetError> {
        Self::read_csv(File::open(path)?, schema)
    }

    /// Parses a dataset. Lines starting with `#` are ignored; row numbers in
    /// errors count data rows from 1.
    pub fn read_csv<R: Read>(input: R, schema: &VariableSchema) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let expected = schema.header();
        for col in &expected {
            if !header.contains(col) {
                return Err(DatasetError::Column(format!("missing column '{col}'")));
            }
        }
        for col in &header {
            if !expected.contains(col) {
                return Err(DatasetError::Column(format!("unexpected column '{col}'")));
            }
        }
        if header != expected {
            return Err(DatasetError::Column(format!(
                "columns out of order; expected {}",
                expected.join(",")
            )));
        }

        let (p, q) = (schema.p(), schema.q());
        let mut records = Vec::new();
        for (i, result) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = result?;
            if rec.len() != expected.len() {
                return Err(DatasetError::Parse {
                    row,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", expected.len(), rec.len()),
                });
            }
            let engine_id = rec[0].trim().to_string();
            if engine_id.is_empty() {
                return Err(DatasetError::Parse {
                    row,
                    column: ENGINE_ID_COLUMN.into(),
                    message: "empty engine id".into(),
                });
            }
            let flight_index: u32 = rec[1].trim().parse().map_err(|e| DatasetError::Parse {
                row,
                column: FLIGHT_INDEX_COLUMN.into(),
                message: format!("'{}': {e}", &rec[1]),
            })?;
            let mut values = Vec::with_capacity(p + q);
            for (c, cell) in rec.iter().enumerate().skip(2) {
                let v: f64 = cell.trim().parse().map_err(|e| DatasetError::Parse {
                    row,
                    column: expected[c].clone(),
                    message: format!("'{cell}': {e}"),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        row,
                        column: expected[c].clone(),
                        message: format!("non-finite value '{cell}'"),
                    });
                }
                values.push(v);
            }
            let x = values.split_off(p);
            records.push(FlightRecord {
                engine_id,
                flight_index,
                y: values,
                x,
            });
        }
        Self::new(schema.clone(), records)
    }

    pub fn summarize(&self) -> Summary {
        let counts: Vec<usize> = self.engines.iter().map(|e| e.len()).collect();
        let names: Vec<&String> = self
            .schema
            .engine_var_names
            .iter()
            .chain(self.schema.env_var_names.iter())
            .collect();
        let n = self.len() as f64;
        let variables = names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let value = |r: &FlightRecord| {
                    if c < self.schema.p() {
                        r.y[c]
                    } else {
                        r.x[c - self.schema.p()]
                    }
                };
                let mean = self.records.iter().map(value).sum::<f64>() / n;
                let var = self
                    .records
                    .iter()
                    .map(|r| (value(r) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                VariableSummary {
                    name: (*name).clone(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        Summary {
            engines: self.engine_count(),
            records: self.len(),
            min_flights: counts.iter().copied().min().unwrap_or(0),
            max_flights: counts.iter().copied().max().unwrap_or(0),
            variables,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub engines: usize,
    pub records: usize,
    pub min_flights: usize,
    pub max_flights: usize,
    pub variables: Vec<VariableSummary>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "engines: {}  records: {}  flights per engine: {}..={}",
            self.engines, self.records, self.min_flights, self.max_flights
        )?;
        for v in &self.variables {
            writeln!(f, "  {:<32} mean {:>14.6}  std {:>12.6}", v.name, v.mean, v.std)?;
        }
        Ok(())
    }
}
