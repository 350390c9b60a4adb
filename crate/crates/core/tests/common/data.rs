//! Random stores and regions that stress grid-cell and region edges.

use std::collections::BTreeMap;

use proptest::prelude::*;
use surface_sync_core::datastore::{AssetRecord, Store};
use surface_sync_core::geo::{GeoBounds, GeoPoint};

use super::arb_region;

pub fn arb_point() -> impl Strategy<Value = GeoPoint> {
    prop_oneof![
        8 => (-90.0..=90.0f64, -180.0..=180.0f64),
        1 => (prop_oneof![Just(-90.0), Just(90.0), Just(85.051_128_78), Just(-85.051_128_78), Just(0.0)],
              prop_oneof![Just(-180.0), Just(180.0), Just(0.0)]),
        // Coarse grid so points land exactly on random region edges.
        2 => (-9i32..=9, -18i32..=18).prop_map(|(a, b)| (f64::from(a) * 10.0, f64::from(b) * 10.0)),
    ]
    .prop_map(|(lat, lon)| GeoPoint { lat, lon })
}

pub fn store_of(points: &[GeoPoint], cells: usize) -> Store {
    let recs = points
        .iter()
        .enumerate()
        .map(|(i, p)| AssetRecord {
            id: format!("r{i:04}"),
            pos: *p,
            ts: "2024-01-01T00:00:00Z".parse().unwrap(),
            attrs: BTreeMap::new(),
        })
        .collect();
    Store::with_grid(recs, cells).unwrap()
}

pub fn edgy_region() -> impl Strategy<Value = GeoBounds> {
    prop_oneof![
        3 => arb_region(),
        1 => (-9i32..=9, -9i32..=9, -18i32..=18, -18i32..=18).prop_map(|(a, b, c, d)| GeoBounds {
            north_west: GeoPoint { lat: f64::from(a.max(b)) * 10.0, lon: f64::from(c.min(d)) * 10.0 },
            south_east: GeoPoint { lat: f64::from(a.min(b)) * 10.0, lon: f64::from(c.max(d)) * 10.0 },
        }),
    ]
}

/// `b` pushed outwards by `(north, south, west, east)` degrees, clamped.
pub fn enlarge(b: &GeoBounds, grow: (f64, f64, f64, f64)) -> GeoBounds {
    GeoBounds {
        north_west: GeoPoint { lat: (b.north() + grow.0).min(90.0), lon: (b.west() - grow.2).max(-180.0) },
        south_east: GeoPoint { lat: (b.south() - grow.1).max(-90.0), lon: (b.east() + grow.3).min(180.0) },
    }
}
