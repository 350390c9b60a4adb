//! In-memory asset store standing in for the remote database.
//!
//! A [`Store`] is immutable once built. Records are kept sorted by id and
//! bucketed into a uniform grid over normalised Mercator coordinates for
//! bounding-box lookups.

mod grid;
mod ingest;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoBounds, GeoPoint};
use crate::query::{self, CompareOp, Predicate, Projection, QueryAst, Value, Violation};

pub use grid::{GridIndex, DEFAULT_GRID_CELLS};
pub use ingest::Format;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub pos: GeoPoint,
    pub ts: DateTime<Utc>,
    #[serde(default)]
    pub attrs: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub records: Vec<AssetRecord>,
    pub total: usize,
}

impl ResultSet {
    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("duplicate id {id:?} on rows {rows:?}")]
    DuplicateId { id: String, rows: Vec<usize> },
    #[error("invalid query: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidQuery(Vec<Violation>),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone)]
pub struct Store {
    records: Vec<AssetRecord>,
    by_id: HashMap<String, usize>,
    attrs: BTreeSet<String>,
    grid: GridIndex,
}

impl Default for Store {
    fn default() -> Self {
        Self::from_records(Vec::new()).expect("empty store")
    }
}

impl Store {
    pub fn from_records(records: Vec<AssetRecord>) -> Result<Self, DataError> {
        Self::with_grid(records, DEFAULT_GRID_CELLS)
    }

    /// Builds a store. `records[i]` is reported as row `i + 1` in errors.
    pub fn with_grid(records: Vec<AssetRecord>, cells: usize) -> Result<Self, DataError> {
        Self::from_rows(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(), cells)
    }

    fn from_rows(rows: Vec<(usize, AssetRecord)>, cells: usize) -> Result<Self, DataError> {
        let mut seen: HashMap<&str, Vec<usize>> = HashMap::new();
        for (row, r) in &rows {
            validate_record(r).map_err(|reason| DataError::Parse { row: *row, reason })?;
            seen.entry(r.id.as_str()).or_default().push(*row);
        }
        if let Some((_, r)) = rows.iter().find(|(_, r)| seen[r.id.as_str()].len() > 1) {
            return Err(DataError::DuplicateId {
                id: r.id.clone(),
                rows: seen[r.id.as_str()].clone(),
            });
        }
        drop(seen);
        let mut records: Vec<AssetRecord> = rows.into_iter().map(|(_, r)| r).collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let attrs = records
            .iter()
            .flat_map(|r| r.attrs.keys().cloned())
            .collect();
        let grid = GridIndex::build(cells, records.iter().map(|r| r.pos));
        Ok(Self {
            records,
            by_id,
            attrs,
            grid,
        })
    }

    pub fn ingest(path: impl AsRef<Path>, format: Format) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::from_rows(ingest::read(file, format)?, DEFAULT_GRID_CELLS)
    }

    pub fn ingest_reader(reader: impl std::io::Read, format: Format) -> Result<Self, DataError> {
        Self::from_rows(ingest::read(reader, format)?, DEFAULT_GRID_CELLS)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ascending id order.
    pub fn records(&self) -> &[AssetRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&AssetRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Free attribute names present on at least one record.
    pub fn attribute_names(&self) -> &BTreeSet<String> {
        &self.attrs
    }

    /// Ids inside `b` (inclusive), answered through the grid.
    pub fn bbox_index_query(&self, b: &GeoBounds) -> BTreeSet<String> {
        self.bbox_indices(b)
            .into_iter()
            .map(|i| self.records[i].id.clone())
            .collect()
    }

    /// Ids inside `b` (inclusive) by linear scan.
    pub fn bbox_scan(&self, b: &GeoBounds) -> BTreeSet<String> {
        self.records
            .iter()
            .filter(|r| b.contains(&r.pos))
            .map(|r| r.id.clone())
            .collect()
    }

    fn bbox_indices(&self, b: &GeoBounds) -> BTreeSet<usize> {
        self.grid
            .candidates(b)
            .filter(|&i| b.contains(&self.records[i].pos))
            .collect()
    }

    /// Runs a query. Matches are returned in ascending id order; `total`
    /// counts matches before the limit.
    pub fn evaluate(&self, ast: &QueryAst) -> Result<ResultSet, DataError> {
        query::validate(ast).map_err(DataError::InvalidQuery)?;
        for p in &ast.predicates {
            if p.attr != "id" && p.attr != "ts" && !self.attrs.contains(&p.attr) {
                return Err(DataError::UnknownAttribute(p.attr.clone()));
            }
        }
        let candidates: BTreeSet<usize> = if ast.regions.is_empty() {
            (0..self.records.len()).collect()
        } else {
            ast.regions
                .iter()
                .flat_map(|r| self.bbox_indices(r))
                .collect()
        };
        let matched: Vec<&AssetRecord> = candidates
            .into_iter()
            .map(|i| &self.records[i])
            .filter(|r| ast.predicates.iter().all(|p| predicate_holds(r, p)))
            .filter(|r| {
                ast.time_window
                    .map_or(true, |w| r.ts >= w.start && r.ts <= w.end)
            })
            .collect();
        let total = matched.len();
        let take = ast.limit.map_or(total, |n| total.min(n as usize));
        let records = matched
            .into_iter()
            .take(take)
            .map(|r| project(r, &ast.projection))
            .collect();
        Ok(ResultSet { records, total })
    }
}

fn validate_record(r: &AssetRecord) -> Result<(), String> {
    if r.id.is_empty() {
        return Err("empty id".into());
    }
    r.pos.validate().map_err(|e| e.to_string())?;
    for (k, v) in &r.attrs {
        if query::RESERVED_ATTRS.contains(&k.as_str()) {
            return Err(format!("reserved attribute name {k:?}"));
        }
        if !query::is_identifier(k) {
            return Err(format!("invalid attribute name {k:?}"));
        }
        if matches!(v, AttrValue::Num(n) if !n.is_finite()) {
            return Err(format!("non-finite value for {k}"));
        }
    }
    Ok(())
}

fn project(r: &AssetRecord, projection: &Projection) -> AssetRecord {
    match projection {
        Projection::All => r.clone(),
        Projection::Attrs(names) => AssetRecord {
            attrs: r
                .attrs
                .iter()
                .filter(|(k, _)| names.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            ..r.clone()
        },
    }
}

/// Predicate semantics: a missing attribute or a type mismatch is false,
/// strings compare bytewise, CONTAINS is a case-sensitive substring test.
pub fn predicate_holds(r: &AssetRecord, p: &Predicate) -> bool {
    let ord = match (p.attr.as_str(), &p.value) {
        ("id", Value::Str(s)) => {
            if p.op == CompareOp::Contains {
                return r.id.contains(s.as_str());
            }
            r.id.as_str().cmp(s.as_str())
        }
        ("ts", Value::Time(t)) => r.ts.cmp(t),
        (attr, value) => match (r.attrs.get(attr), value) {
            (Some(AttrValue::Str(have)), Value::Str(want)) => {
                if p.op == CompareOp::Contains {
                    return have.contains(want.as_str());
                }
                have.as_str().cmp(want.as_str())
            }
            (Some(AttrValue::Num(have)), Value::Num(want)) if p.op != CompareOp::Contains => {
                match have.partial_cmp(want) {
                    Some(o) => o,
                    None => return false,
                }
            }
            _ => return false,
        },
    };
    if p.op == CompareOp::Contains {
        return false;
    }
    p.op.holds(ord)
}

impl PartialOrd for AttrValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (AttrValue::Num(a), AttrValue::Num(b)) => a.partial_cmp(b),
            (AttrValue::Str(a), AttrValue::Str(b)) => a.partial_cmp(b),
            _ => None,
        }
    }
}
