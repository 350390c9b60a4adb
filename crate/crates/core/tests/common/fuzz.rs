//! Seed corpus and byte-level mutator for parser fuzzing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use surface_sync_core::query::{emit, CompareOp, Dialect, Predicate, Projection, QueryAst, Value};

pub fn seeds() -> Vec<String> {
    let ast = QueryAst {
        regions: vec![surface_sync_core::geo::GeoBounds {
            north_west: surface_sync_core::geo::GeoPoint { lat: 10.0, lon: 20.0 },
            south_east: surface_sync_core::geo::GeoPoint { lat: -10.0, lon: 40.0 },
        }],
        predicates: vec![
            Predicate::new("type", CompareOp::Eq, Value::Str("cargo".into())),
            Predicate::new("name", CompareOp::Contains, Value::Str("o\"b".into())),
            Predicate::new("speed_kn", CompareOp::Gt, Value::Num(12.5)),
        ],
        projection: Projection::Attrs(vec!["name".into()]),
        limit: Some(5),
        time_window: None,
    };
    vec![
        emit(&ast, Dialect::Sparql).text,
        emit(&ast, Dialect::VisualJson).text,
        "PREFIX : <urn:x#>\nSELECT ?s ?n WHERE { ?s :lat ?lat ; :lon ?lon ; :name ?n . FILTER(CONTAINS(?n, \"x\")) } LIMIT 5".into(),
        "SELECT * WHERE { ?s :lat ?lat ; :lon ?lon OPTIONAL { ?s :x ?x } } ORDER BY ?lat".into(),
        "{}".into(),
        String::new(),
    ]
}

pub fn mutate(rng: &mut ChaCha8Rng, seed: &str) -> String {
    let mut bytes = seed.as_bytes().to_vec();
    for _ in 0..rng.gen_range(1..6) {
        match rng.gen_range(0..4) {
            0 if !bytes.is_empty() => {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] = rng.gen();
            }
            1 if !bytes.is_empty() => {
                let i = rng.gen_range(0..bytes.len());
                bytes.truncate(i);
            }
            2 => {
                let i = rng.gen_range(0..=bytes.len());
                let tok: &[u8] = [&b"{"[..], b"}", b"\"", b"\\", b"?", b"FILTER(", b"&&", b"1e999", b"-", b"\xff", b"<", b"'"][rng.gen_range(0..12)];
                bytes.splice(i..i, tok.iter().copied());
            }
            _ if bytes.len() > 1 => {
                let i = rng.gen_range(0..bytes.len() - 1);
                bytes.swap(i, i + 1);
            }
            _ => bytes.push(rng.gen()),
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}
