//! VISUAL-JSON: the wire serialization of [`QueryAst`].
//!
//! ```json
//! {"v":1,"regions":[{"nw":[lat,lon],"se":[lat,lon]}],
//!  "preds":[{"attr":"type","op":"=","val":"cargo"}],"proj":["*"],"limit":5}
//! ```
//!
//! `val` is a JSON string or number; timestamps are `{"ts":"<RFC 3339>"}`.
//! An optional `"time":[start,end]` pair is accepted on input and folded
//! into `ts` predicates by canonicalization. Canonical output has sorted
//! keys, no whitespace, and omits `limit` when unset.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{
    CompareOp, Dialect, Predicate, Projection, QueryAst, QueryError, QueryText, TimeWindow, Value,
};
use crate::geo::{GeoBounds, GeoPoint};

pub const VISUAL_JSON_VERSION: u32 = 1;

// Field order is alphabetical so serde emits sorted keys.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit: Option<u64>,
    #[serde(default)]
    preds: Vec<PredDoc>,
    #[serde(default = "all_projection")]
    proj: Vec<String>,
    #[serde(default)]
    regions: Vec<RegionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<[String; 2]>,
    v: u32,
}

fn all_projection() -> Vec<String> {
    vec!["*".into()]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    nw: [f64; 2],
    se: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredDoc {
    attr: String,
    op: CompareOp,
    val: ValDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ValDoc {
    Num(f64),
    Str(String),
    Time { ts: String },
}

fn time_str(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, QueryError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| QueryError::syntax(0, format!("RFC 3339 timestamp ({e})")))
}

pub fn parse_visual_json(text: &str) -> Result<QueryAst, QueryError> {
    let doc: Doc = serde_json::from_str(text).map_err(|e| {
        let line_start: usize = text
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum();
        QueryError::syntax(
            (line_start + e.column().saturating_sub(1)).min(text.len()),
            format!("VISUAL-JSON document ({e})"),
        )
    })?;
    if doc.v != VISUAL_JSON_VERSION {
        return Err(QueryError::UnsupportedFeature(format!(
            "VISUAL-JSON version {}",
            doc.v
        )));
    }
    let regions = doc
        .regions
        .iter()
        .map(|r| GeoBounds {
            north_west: GeoPoint {
                lat: r.nw[0],
                lon: r.nw[1],
            },
            south_east: GeoPoint {
                lat: r.se[0],
                lon: r.se[1],
            },
        })
        .collect();
    let mut predicates = Vec::with_capacity(doc.preds.len());
    for p in doc.preds {
        let value = match p.val {
            ValDoc::Num(n) => Value::Num(n),
            ValDoc::Str(s) => Value::Str(s),
            ValDoc::Time { ts } => Value::Time(parse_time(&ts)?),
        };
        predicates.push(Predicate::new(p.attr, p.op, value));
    }
    let projection = if doc.proj.len() == 1 && doc.proj[0] == "*" {
        Projection::All
    } else if doc.proj.iter().any(|p| p == "*") {
        return Err(QueryError::syntax(0, "either [\"*\"] or attribute names in proj"));
    } else {
        Projection::Attrs(doc.proj)
    };
    let time_window = match doc.time {
        None => None,
        Some([a, b]) => Some(TimeWindow {
            start: parse_time(&a)?,
            end: parse_time(&b)?,
        }),
    };
    Ok(QueryAst {
        regions,
        predicates,
        projection,
        limit: doc.limit,
        time_window,
    })
}

pub fn emit_visual_json(ast: &QueryAst) -> QueryText {
    let ast = ast.canonicalize();
    let doc = Doc {
        limit: ast.limit,
        preds: ast
            .predicates
            .iter()
            .map(|p| PredDoc {
                attr: p.attr.clone(),
                op: p.op,
                val: match &p.value {
                    Value::Num(n) => ValDoc::Num(*n),
                    Value::Str(s) => ValDoc::Str(s.clone()),
                    Value::Time(t) => ValDoc::Time { ts: time_str(t) },
                },
            })
            .collect(),
        proj: match &ast.projection {
            Projection::All => all_projection(),
            Projection::Attrs(names) => names.clone(),
        },
        regions: ast
            .regions
            .iter()
            .map(|r| RegionDoc {
                nw: [r.north(), r.west()],
                se: [r.south(), r.east()],
            })
            .collect(),
        time: None,
        v: VISUAL_JSON_VERSION,
    };
    QueryText::new(
        Dialect::VisualJson,
        serde_json::to_string(&doc).expect("query document serializes"),
    )
}
