//! SQLite and brute-force oracles over the vessel fixture.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rusqlite::Connection;
use surface_sync_core::geo::{GeoBounds, GeoPoint};
use surface_sync_core::query::{emit, CompareOp, Dialect, Predicate, Projection, QueryAst, TimeWindow, Value};

use super::VESSELS;

#[derive(Debug, Clone)]
pub struct Row {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub ts: DateTime<Utc>,
    pub text: BTreeMap<String, String>,
    pub num: BTreeMap<String, f64>,
}

pub fn rows() -> Vec<Row> {
    let mut r = csv::Reader::from_reader(VESSELS.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let speed = rec[5].trim();
            Row {
                id: rec[0].to_string(),
                lat: rec[1].parse().unwrap(),
                lon: rec[2].parse().unwrap(),
                ts: DateTime::parse_from_rfc3339(&rec[3]).unwrap().with_timezone(&Utc),
                text: [("type", 4), ("flag", 6), ("name", 7)]
                    .into_iter()
                    .map(|(k, i)| (k.to_string(), rec[i].to_string()))
                    .collect(),
                num: if speed.is_empty() {
                    BTreeMap::new()
                } else {
                    BTreeMap::from([("speed_kn".to_string(), speed.parse().unwrap())])
                },
            }
        })
        .collect()
}

pub fn sqlite(rows: &[Row]) -> Connection {
    let db = Connection::open_in_memory().unwrap();
    db.execute_batch(
        "PRAGMA case_sensitive_like = ON;
         CREATE TABLE assets (id TEXT PRIMARY KEY, lat REAL, lon REAL, ts TEXT, type TEXT, speed_kn REAL, flag TEXT, name TEXT);",
    )
    .unwrap();
    for r in rows {
        db.execute(
            "INSERT INTO assets VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            rusqlite::params![
                r.id,
                r.lat,
                r.lon,
                r.ts.format("%Y-%m-%dT%H:%M:%S%.9fZ").to_string(),
                r.text["type"],
                r.num.get("speed_kn"),
                r.text["flag"],
                r.text["name"],
            ],
        )
        .unwrap();
    }
    db
}

pub fn sql_ids(db: &Connection, ast: &QueryAst) -> Vec<String> {
    let sql = emit(ast, Dialect::Sql).text;
    let mut stmt = db.prepare(&sql).unwrap_or_else(|e| panic!("{e}: {sql}"));
    let ids = stmt.query_map([], |r| r.get::<_, String>("id")).unwrap();
    ids.map(Result::unwrap).collect()
}

pub fn op_holds(op: CompareOp, o: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CompareOp::Eq => o == Equal,
        CompareOp::Ne => o != Equal,
        CompareOp::Lt => o == Less,
        CompareOp::Le => o != Greater,
        CompareOp::Gt => o == Greater,
        CompareOp::Ge => o != Less,
        CompareOp::Contains => unreachable!(),
    }
}

pub fn brute(rows: &[Row], ast: &QueryAst) -> Vec<String> {
    let in_region = |r: &Row, b: &GeoBounds| {
        r.lat <= b.north_west.lat && r.lat >= b.south_east.lat && r.lon >= b.north_west.lon && r.lon <= b.south_east.lon
    };
    let holds = |r: &Row, p: &Predicate| match (&p.value, p.op) {
        (Value::Str(s), CompareOp::Contains) => r.text.get(&p.attr).is_some_and(|t| t.contains(s.as_str())),
        (Value::Str(s), op) if p.attr == "id" => op_holds(op, r.id.as_str().cmp(s)),
        (Value::Str(s), op) => r.text.get(&p.attr).is_some_and(|t| op_holds(op, t.as_str().cmp(s))),
        (Value::Num(n), op) => r.num.get(&p.attr).is_some_and(|x| op_holds(op, x.partial_cmp(n).unwrap())),
        (Value::Time(t), op) => op_holds(op, r.ts.cmp(t)),
    };
    let mut out: Vec<String> = rows
        .iter()
        .filter(|r| ast.regions.is_empty() || ast.regions.iter().any(|b| in_region(r, b)))
        .filter(|r| ast.predicates.iter().all(|p| holds(r, p)))
        .filter(|r| ast.time_window.map_or(true, |w| r.ts >= w.start && r.ts <= w.end))
        .map(|r| r.id.clone())
        .collect();
    out.sort();
    out.truncate(ast.limit.map_or(usize::MAX, |n| n as usize));
    out
}

pub fn region(n: f64, w: f64, s: f64, e: f64) -> GeoBounds {
    GeoBounds {
        north_west: GeoPoint { lat: n, lon: w },
        south_east: GeoPoint { lat: s, lon: e },
    }
}

pub fn t(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

pub fn p(attr: &str, op: CompareOp, v: Value) -> Predicate {
    Predicate::new(attr, op, v)
}

pub fn s(x: &str) -> Value {
    Value::Str(x.into())
}

pub fn twenty_queries() -> Vec<QueryAst> {
    use CompareOp::*;
    let q = |regions: Vec<GeoBounds>, predicates: Vec<Predicate>| QueryAst {
        regions,
        predicates,
        ..Default::default()
    };
    let mut v = vec![
        q(vec![region(10.0, 20.0, -10.0, 40.0)], vec![]),
        q(vec![region(90.0, -180.0, -90.0, 180.0)], vec![]),
        q(vec![region(0.0, 30.0, 0.0, 30.0)], vec![]),
        q(vec![region(10.0, 20.0, -10.0, 40.0), region(60.0, -10.0, 30.0, 30.0)], vec![]),
        q(vec![], vec![p("type", Eq, s("cargo"))]),
        q(vec![], vec![p("type", Ne, s("cargo")), p("speed_kn", Ge, Value::Num(10.0))]),
        q(vec![region(50.0, -100.0, -50.0, 100.0)], vec![p("speed_kn", Lt, Value::Num(8.3))]),
        q(vec![], vec![p("speed_kn", Le, Value::Num(8.3))]),
        q(vec![], vec![p("name", Contains, s("Ltd 100%"))]),
        q(vec![], vec![p("name", Contains, s("_"))]),
        q(vec![], vec![p("name", Contains, s("an"))]),
        q(vec![], vec![p("flag", Gt, s("M")), p("flag", Lt, s("SG"))]),
        q(vec![], vec![p("id", Eq, s("v08"))]),
        q(vec![], vec![p("ts", Ge, Value::Time(t("2024-03-01T12:00:00Z")))]),
        q(vec![], vec![p("ts", Lt, Value::Time(t("2024-03-01T03:05:00Z")))]),
        q(vec![region(80.0, -170.0, -80.0, 170.0)], vec![p("type", Eq, s("tanker")), p("name", Contains, s("e"))]),
        q(vec![], vec![p("name", Contains, s("cargo"))]),
    ];
    let mut limited = q(vec![region(90.0, -180.0, -90.0, 180.0)], vec![p("type", Ne, s("tug"))]);
    limited.limit = Some(7);
    v.push(limited);
    let mut windowed = q(vec![region(60.0, -60.0, -60.0, 60.0)], vec![]);
    windowed.time_window = Some(TimeWindow {
        start: t("2024-03-01T06:10:00Z"),
        end: t("2024-03-01T18:30:00Z"),
    });
    v.push(windowed);
    let mut projected = q(vec![region(10.0, 20.0, -10.0, 40.0)], vec![p("speed_kn", Ne, Value::Num(5.8))]);
    projected.projection = Projection::Attrs(vec!["name".into(), "type".into()]);
    v.push(projected);
    v
}
