mod common;

use common::data::{arb_point, edgy_region, enlarge, store_of};
use common::{vessels, THREE};
use proptest::prelude::*;
use surface_sync_core::datastore::{AttrValue, DataError, Format, Store};
use surface_sync_core::geo::{GeoBounds, GeoPoint};
use surface_sync_core::query::{CompareOp, Predicate, QueryAst, Value};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn index_equals_scan(
        points in prop::collection::vec(arb_point(), 0..80),
        cells in prop_oneof![Just(64usize), Just(1), 2usize..20],
        b in edgy_region(),
    ) {
        let store = store_of(&points, cells);
        prop_assert_eq!(store.bbox_index_query(&b), store.bbox_scan(&b));
    }

    #[test]
    fn fixture_index_equals_scan(b in edgy_region()) {
        let store = vessels();
        prop_assert_eq!(store.bbox_index_query(&b), store.bbox_scan(&b));
    }

    #[test]
    fn larger_region_never_loses_records(
        points in prop::collection::vec(arb_point(), 0..80),
        b in edgy_region(),
        grow in (0.0..30.0f64, 0.0..30.0f64, 0.0..60.0f64, 0.0..60.0f64),
    ) {
        let store = store_of(&points, 64);
        let big = enlarge(&b, grow);
        let small = store.bbox_index_query(&b);
        let large = store.bbox_index_query(&big);
        prop_assert!(small.is_subset(&large));
        let q = |r| QueryAst { regions: vec![r], ..Default::default() };
        let a = store.evaluate(&q(b)).unwrap().total;
        let z = store.evaluate(&q(big)).unwrap().total;
        prop_assert!(a <= z);
    }
}

#[test]
fn three_row_fixture() {
    let store = Store::ingest_reader(THREE.as_bytes(), Format::Csv).unwrap();
    assert_eq!(store.len(), 3);
    let a2 = store.get("a2").unwrap();
    assert_eq!(a2.attrs["name"], AttrValue::Str("Lion, City".into()));
    assert_eq!(a2.attrs["speed_kn"], AttrValue::Num(8.0));
    let a3 = store.get("a3").unwrap();
    assert!(!a3.attrs.contains_key("speed_kn"), "empty cell is a missing attribute");
    assert_eq!(a3.ts, "2024-01-01T22:00:00Z".parse::<chrono::DateTime<chrono::Utc>>().unwrap());

    let slow = QueryAst {
        predicates: vec![Predicate::new("speed_kn", CompareOp::Lt, Value::Num(100.0))],
        ..Default::default()
    };
    assert_eq!(store.evaluate(&slow).unwrap().ids(), ["a1", "a2"]);
    let ne = QueryAst {
        predicates: vec![Predicate::new("speed_kn", CompareOp::Ne, Value::Num(8.0))],
        ..Default::default()
    };
    assert_eq!(store.evaluate(&ne).unwrap().ids(), ["a1"]);
}

#[test]
fn jsonl_ingest_matches_csv() {
    let csv = Store::ingest_reader(THREE.as_bytes(), Format::Csv).unwrap();
    let jsonl = r#"{"id":"a1","lat":59.9,"lon":10.7,"ts":"2024-01-01T00:00:00Z","type":"cargo","speed_kn":12.5,"flag":"NO","name":"Oslo Carrier"}
{"id":"a2","lat":1.3,"lon":103.8,"ts":"2024-01-01T06:00:00Z","type":"tanker","speed_kn":8,"flag":"SG","name":"Lion, City"}
{"id":"a3","lat":-33.9,"lon":18.4,"ts":"2024-01-02T00:00:00+02:00","type":"fishing","flag":"ZA","name":"Cape Trawler"}
"#;
    let back = Store::ingest_reader(jsonl.as_bytes(), Format::Jsonl).unwrap();
    assert_eq!(back.records(), csv.records());
}

#[test]
fn fixture_rectangle_and_limits() {
    let store = vessels();
    assert_eq!(store.len(), 50);
    let rect = GeoBounds {
        north_west: GeoPoint { lat: 10.0, lon: 20.0 },
        south_east: GeoPoint { lat: -10.0, lon: 40.0 },
    };
    let all = store.evaluate(&QueryAst { regions: vec![rect], ..Default::default() }).unwrap();
    let limited = store
        .evaluate(&QueryAst { regions: vec![rect], limit: Some(2), ..Default::default() })
        .unwrap();
    assert_eq!(limited.total, all.total);
    assert_eq!(limited.ids(), all.ids()[..2]);
    let mut sorted = all.ids();
    sorted.sort();
    assert_eq!(sorted, all.ids());
}

#[test]
fn unknown_attribute_and_empty_query_rejected() {
    let store = vessels();
    let bad = QueryAst {
        predicates: vec![Predicate::new("colour", CompareOp::Eq, Value::Str("red".into()))],
        ..Default::default()
    };
    assert!(matches!(store.evaluate(&bad), Err(DataError::UnknownAttribute(a)) if a == "colour"));
    assert!(matches!(store.evaluate(&QueryAst::default()), Err(DataError::InvalidQuery(_))));
}

#[test]
fn duplicate_ids_report_rows() {
    let text = "id,lat,lon,ts\nx,0,0,2024-01-01T00:00:00Z\ny,1,1,2024-01-01T00:00:00Z\nx,2,2,2024-01-01T00:00:00Z\n";
    match Store::ingest_reader(text.as_bytes(), Format::Csv) {
        Err(DataError::DuplicateId { id, rows }) => {
            assert_eq!(id, "x");
            assert_eq!(rows, [2, 4]);
        }
        other => panic!("{other:?}"),
    }
}
