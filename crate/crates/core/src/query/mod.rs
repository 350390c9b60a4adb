//! Structured visual query model and translation between query dialects.
//!
//! [`QueryAst`] is the pivot representation. SPARQL (a bbox + filter subset)
//! and VISUAL-JSON can be parsed into it; SPARQL, SQL and VISUAL-JSON can be
//! emitted from it. SQL is emit-only.

mod sparql;
mod sql;
mod visual;

use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoBounds;

pub use sparql::{emit_sparql, emit_sparql_with, parse_sparql, parse_sparql_with, Vocabulary};
pub use sql::{emit_sql, SQL_TABLE};
pub use visual::{emit_visual_json, parse_visual_json};

/// Attribute names that address record fields rather than free attributes.
pub const RESERVED_ATTRS: [&str; 4] = ["id", "lat", "lon", "ts"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dialect {
    #[serde(rename = "SPARQL")]
    Sparql,
    #[serde(rename = "SQL")]
    Sql,
    #[serde(rename = "VISUAL-JSON")]
    VisualJson,
}

impl Dialect {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dialect::Sparql => "SPARQL",
            Dialect::Sql => "SQL",
            Dialect::VisualJson => "VISUAL-JSON",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dialect {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SPARQL" => Ok(Dialect::Sparql),
            "SQL" => Ok(Dialect::Sql),
            "VISUAL-JSON" | "VISUAL_JSON" | "VISUAL" => Ok(Dialect::VisualJson),
            _ => Err(QueryError::UnsupportedDialect(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryText {
    pub dialect: Dialect,
    pub text: String,
}

impl QueryText {
    pub fn new(dialect: Dialect, text: impl Into<String>) -> Self {
        Self {
            dialect,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("syntax error at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("unsupported dialect: {0}")]
    UnsupportedDialect(String),
}

impl QueryError {
    pub(crate) fn syntax(position: usize, expected: impl Into<String>) -> Self {
        QueryError::Syntax {
            position,
            expected: expected.into(),
        }
    }

    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Syntax { position, .. } => Some(*position),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "CONTAINS")]
    Contains,
}

impl CompareOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Contains => "CONTAINS",
        }
    }

    pub fn is_ordering(&self) -> bool {
        matches!(
            self,
            CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge
        )
    }

    /// Operator with its operands swapped (`a < b` ⇔ `b > a`).
    pub(crate) fn flipped(&self) -> Self {
        match self {
            CompareOp::Lt => CompareOp::Gt,
            CompareOp::Le => CompareOp::Ge,
            CompareOp::Gt => CompareOp::Lt,
            CompareOp::Ge => CompareOp::Le,
            other => *other,
        }
    }

    /// Applies the operator to an already computed ordering.
    pub fn holds(&self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
            CompareOp::Contains => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    Time(DateTime<Utc>),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Num(_) => 0,
            Value::Str(_) => 1,
            Value::Time(_) => 2,
        }
    }

    /// Total order used for canonical sorting only.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Time(a), Value::Time(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub attr: String,
    pub op: CompareOp,
    pub value: Value,
}

impl Predicate {
    pub fn new(attr: impl Into<String>, op: CompareOp, value: Value) -> Self {
        Self {
            attr: attr.into(),
            op,
            value,
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.attr
            .cmp(&other.attr)
            .then(self.op.cmp(&other.op))
            .then_with(|| self.value.canonical_cmp(&other.value))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Projection {
    #[default]
    All,
    /// Free attributes to keep; id, position and timestamp are always kept.
    Attrs(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryAst {
    pub regions: Vec<GeoBounds>,
    pub predicates: Vec<Predicate>,
    pub projection: Projection,
    pub limit: Option<u64>,
    pub time_window: Option<TimeWindow>,
}

fn bounds_cmp(a: &GeoBounds, b: &GeoBounds) -> Ordering {
    a.north()
        .total_cmp(&b.north())
        .then(a.west().total_cmp(&b.west()))
        .then(a.south().total_cmp(&b.south()))
        .then(a.east().total_cmp(&b.east()))
}

impl QueryAst {
    /// Canonical form: regions and predicates sorted and deduplicated, the
    /// projection sorted, and a time window folded into the two inclusive
    /// `ts` predicates it stands for.
    pub fn canonicalize(&self) -> QueryAst {
        let mut regions = self.regions.clone();
        regions.sort_by(bounds_cmp);
        regions.dedup_by(|a, b| bounds_cmp(a, b) == Ordering::Equal);

        let mut predicates = self.predicates.clone();
        if let Some(w) = self.time_window {
            predicates.push(Predicate::new("ts", CompareOp::Ge, Value::Time(w.start)));
            predicates.push(Predicate::new("ts", CompareOp::Le, Value::Time(w.end)));
        }
        predicates.sort_by(Predicate::canonical_cmp);
        predicates.dedup_by(|a, b| a.canonical_cmp(b) == Ordering::Equal);

        let projection = match &self.projection {
            Projection::All => Projection::All,
            Projection::Attrs(names) => {
                let mut names = names.clone();
                names.sort();
                names.dedup();
                Projection::Attrs(names)
            }
        };
        QueryAst {
            regions,
            predicates,
            projection,
            limit: self.limit,
            time_window: None,
        }
    }

    /// Every attribute named by a predicate or the projection, sorted.
    pub(crate) fn referenced_attrs(&self) -> Vec<String> {
        let mut out: Vec<String> = self.predicates.iter().map(|p| p.attr.clone()).collect();
        if let Projection::Attrs(names) = &self.projection {
            out.extend(names.iter().cloned());
        }
        out.sort();
        out.dedup();
        out
    }
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One broken invariant of a [`QueryAst`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks every invariant and reports all violations.
pub fn validate(ast: &QueryAst) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if ast.regions.is_empty() && ast.predicates.is_empty() && ast.time_window.is_none() {
        out.push(Violation::new("", "no regions and no predicates"));
    }
    if ast.limit == Some(0) {
        out.push(Violation::new("limit", "limit ≥ 1"));
    }
    for (i, r) in ast.regions.iter().enumerate() {
        if let Err(e) = r.validate() {
            out.push(Violation::new(format!("regions[{i}]"), e.to_string()));
        } else if r.wraps_antimeridian() {
            out.push(Violation::new(
                format!("regions[{i}]"),
                "antimeridian-wrapping regions are not supported",
            ));
        }
    }
    for (i, p) in ast.predicates.iter().enumerate() {
        let path = format!("predicates[{i}]");
        if !is_identifier(&p.attr) {
            out.push(Violation::new(
                &path,
                format!("invalid attribute name {:?}", p.attr),
            ));
        }
        if p.attr == "lat" || p.attr == "lon" {
            out.push(Violation::new(
                &path,
                "lat/lon are filtered through regions, not predicates",
            ));
        }
        if matches!(p.value, Value::Num(n) if !n.is_finite()) {
            out.push(Violation::new(&path, "numeric value must be finite"));
        }
        if p.op == CompareOp::Contains && !matches!(p.value, Value::Str(_)) {
            out.push(Violation::new(&path, "CONTAINS requires a string value"));
        }
        if p.attr == "ts" && !matches!(p.value, Value::Time(_)) {
            out.push(Violation::new(&path, "ts compares against timestamps only"));
        }
        if p.attr != "ts" && matches!(p.value, Value::Time(_)) {
            out.push(Violation::new(&path, "timestamp values apply to ts only"));
        }
        if p.attr == "id" && !matches!(p.value, Value::Str(_)) {
            out.push(Violation::new(&path, "id compares against strings only"));
        }
    }
    if let Projection::Attrs(names) = &ast.projection {
        for (i, n) in names.iter().enumerate() {
            if !is_identifier(n) {
                out.push(Violation::new(
                    format!("projection[{i}]"),
                    format!("invalid attribute name {n:?}"),
                ));
            } else if RESERVED_ATTRS.contains(&n.as_str()) {
                out.push(Violation::new(
                    format!("projection[{i}]"),
                    format!("{n} is always returned and cannot be projected"),
                ));
            }
        }
    }
    if let Some(w) = ast.time_window {
        if w.start > w.end {
            out.push(Violation::new("time_window", "start after end"));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn parse(input: &QueryText) -> Result<QueryAst, QueryError> {
    match input.dialect {
        Dialect::Sparql => parse_sparql(&input.text),
        Dialect::VisualJson => parse_visual_json(&input.text),
        Dialect::Sql => Err(QueryError::UnsupportedDialect(
            "SQL is an output-only dialect".into(),
        )),
    }
}

pub fn emit(ast: &QueryAst, dialect: Dialect) -> QueryText {
    match dialect {
        Dialect::Sparql => emit_sparql(ast),
        Dialect::Sql => emit_sql(ast),
        Dialect::VisualJson => emit_visual_json(ast),
    }
}

/// Parses `input` in its own dialect and re-emits the canonical AST in `target`.
pub fn translate(input: &QueryText, target: Dialect) -> Result<QueryText, QueryError> {
    let ast = parse(input)?;
    Ok(emit(&ast.canonicalize(), target))
}
