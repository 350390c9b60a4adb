#![allow(dead_code)]

pub mod data;
pub mod faults;
pub mod fuzz;
pub mod placement;
pub mod sql;
pub mod tuio;
pub mod wire;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use surface_sync_core::datastore::{Format, Store};
use surface_sync_core::geo::{GeoBounds, GeoPoint, ViewState};
use surface_sync_core::query::{CompareOp, Predicate, Projection, QueryAst, TimeWindow, Value};

pub const VESSELS: &str = include_str!("../fixtures/vessels.csv");
pub const THREE: &str = include_str!("../fixtures/three.csv");

pub fn vessels() -> Store {
    Store::ingest_reader(VESSELS.as_bytes(), Format::Csv).expect("fixture loads")
}

pub fn view(lat: f64, lon: f64, zoom: f64, bearing: f64, w: u32, h: u32) -> ViewState {
    ViewState::new(GeoPoint { lat, lon }, zoom, bearing, w, h).expect("valid view")
}

pub fn arb_region() -> impl Strategy<Value = GeoBounds> {
    (-90.0..=90.0f64, -90.0..=90.0f64, -180.0..=180.0f64, -180.0..=180.0f64).prop_map(|(a, b, c, d)| GeoBounds {
        north_west: GeoPoint { lat: a.max(b), lon: c.min(d) },
        south_east: GeoPoint { lat: a.min(b), lon: c.max(d) },
    })
}

pub fn arb_time() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_102_444_800, prop_oneof![Just(0u32), 0u32..1000, 0u32..1_000_000_000])
        .prop_map(|(s, n)| {
            let nanos = if n < 1000 { n * 1_000_000 } else { n };
            Utc.timestamp_opt(s, nanos).unwrap()
        })
}

pub fn arb_number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(f64::from),
        (-1.0e6..1.0e6f64),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

pub fn arb_string() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{0,8}",
        any::<String>(),
        Just("o'brien".to_string()),
        Just("say \"hi\"\\".to_string()),
        Just("50%_x".to_string()),
    ]
}

fn free_attr() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("type".to_string()),
        Just("speed_kn".to_string()),
        Just("name".to_string()),
        Just("order".to_string()),
        Just("s".to_string()),
        "[A-Za-z_][A-Za-z0-9_]{0,6}".prop_filter("not reserved", |s| !["id", "lat", "lon", "ts"].contains(&s.as_str())),
    ]
}

fn arb_op() -> impl Strategy<Value = CompareOp> {
    prop_oneof![
        Just(CompareOp::Eq),
        Just(CompareOp::Ne),
        Just(CompareOp::Lt),
        Just(CompareOp::Le),
        Just(CompareOp::Gt),
        Just(CompareOp::Ge),
    ]
}

pub fn arb_predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        4 => (free_attr(), arb_op(), arb_number()).prop_map(|(a, o, n)| Predicate::new(a, o, Value::Num(n))),
        3 => (free_attr(), arb_op(), arb_string()).prop_map(|(a, o, s)| Predicate::new(a, o, Value::Str(s))),
        2 => (free_attr(), arb_string()).prop_map(|(a, s)| Predicate::new(a, CompareOp::Contains, Value::Str(s))),
        1 => (arb_op(), arb_time()).prop_map(|(o, t)| Predicate::new("ts", o, Value::Time(t))),
        1 => "v[0-9]{2}".prop_map(|s| Predicate::new("id", CompareOp::Eq, Value::Str(s))),
    ]
}

/// Valid ASTs: at least one region or predicate, limit >= 1.
pub fn arb_ast() -> impl Strategy<Value = QueryAst> {
    (
        prop::collection::vec(arb_region(), 0..3),
        prop::collection::vec(arb_predicate(), 0..4),
        prop_oneof![
            Just(Projection::All),
            prop::collection::vec(free_attr(), 1..3).prop_map(Projection::Attrs)
        ],
        prop::option::of(1u64..1000),
        prop::option::of((arb_time(), arb_time())),
    )
        .prop_filter("runnable", |(r, p, ..)| !r.is_empty() || !p.is_empty())
        .prop_map(|(regions, predicates, projection, limit, tw)| QueryAst {
            regions,
            predicates,
            projection,
            limit,
            time_window: tw.map(|(a, b)| TimeWindow { start: a.min(b), end: a.max(b) }),
        })
}
