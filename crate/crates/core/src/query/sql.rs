use chrono::{DateTime, Utc};

use super::{CompareOp, Dialect, Predicate, Projection, QueryAst, QueryText, Value};
use crate::geo::GeoBounds;

pub const SQL_TABLE: &str = "assets";

/// Fixed-width timestamp rendering, so textual order equals time order.
pub(crate) fn sql_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.9fZ").to_string()
}

// Reserved words that cannot appear as bare column names.
const RESERVED: &[&str] = &[
    "abort", "add", "all", "alter", "and", "any", "as", "asc", "between", "by", "case", "cast",
    "check", "collate", "column", "commit", "constraint", "create", "cross", "current", "default",
    "delete", "desc", "distinct", "drop", "else", "end", "escape", "except", "exists", "false",
    "fetch", "for", "foreign", "from", "full", "glob", "group", "having", "if", "in", "index",
    "inner", "insert", "intersect", "into", "is", "isnull", "join", "key", "left", "like",
    "limit", "match", "natural", "not", "notnull", "null", "of", "offset", "on", "or", "order",
    "outer", "primary", "references", "regexp", "right", "select", "set", "table", "then", "to",
    "transaction", "true", "union", "unique", "update", "using", "values", "when", "where",
    "window", "with",
];

fn ident(name: &str) -> String {
    if RESERVED.contains(&name.to_ascii_lowercase().as_str()) {
        format!("\"{name}\"")
    } else {
        name.to_string()
    }
}

fn string_lit(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn value_lit(v: &Value) -> String {
    match v {
        Value::Num(n) => format!("{n}"),
        Value::Str(s) => string_lit(s),
        Value::Time(t) => string_lit(&sql_timestamp(t)),
    }
}

fn like_pattern(s: &str) -> String {
    let mut out = String::from("%");
    for c in s.chars() {
        if matches!(c, '%' | '_' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('%');
    out
}

fn region_sql(r: &GeoBounds) -> String {
    format!(
        "(lat BETWEEN {} AND {} AND lon BETWEEN {} AND {})",
        r.south(),
        r.north(),
        r.west(),
        r.east()
    )
}

fn predicate_sql(p: &Predicate) -> String {
    let col = ident(&p.attr);
    match p.op {
        CompareOp::Contains => {
            let pat = match &p.value {
                Value::Str(s) => like_pattern(s),
                other => like_pattern(&value_lit(other)),
            };
            format!("{col} LIKE {} ESCAPE '\\'", string_lit(&pat))
        }
        CompareOp::Ne => format!("{col} <> {}", value_lit(&p.value)),
        op => format!("{col} {} {}", op.symbol(), value_lit(&p.value)),
    }
}

/// Emits `SELECT .. FROM assets WHERE (regions) AND preds ORDER BY id [LIMIT n]`.
///
/// Regions are inclusive (`BETWEEN`). Rows come back ordered by id, the same
/// order the datastore returns, so `LIMIT` selects the same records.
pub fn emit_sql(ast: &QueryAst) -> QueryText {
    let ast = ast.canonicalize();
    let proj = match &ast.projection {
        Projection::All => "*".to_string(),
        Projection::Attrs(names) => {
            let mut cols = vec!["id".to_string(), "lat".into(), "lon".into(), "ts".into()];
            cols.extend(names.iter().map(|n| ident(n)));
            cols.join(", ")
        }
    };
    let mut conds = Vec::new();
    match ast.regions.len() {
        0 => {}
        1 => conds.push(region_sql(&ast.regions[0])),
        _ => {
            let alts: Vec<String> = ast.regions.iter().map(region_sql).collect();
            conds.push(format!("({})", alts.join(" OR ")));
        }
    }
    conds.extend(ast.predicates.iter().map(predicate_sql));
    let mut out = format!("SELECT {proj} FROM {SQL_TABLE}");
    if !conds.is_empty() {
        out.push_str(" WHERE ");
        out.push_str(&conds.join(" AND "));
    }
    out.push_str(" ORDER BY id");
    if let Some(n) = ast.limit {
        out.push_str(&format!(" LIMIT {n}"));
    }
    QueryText::new(Dialect::Sql, out)
}
