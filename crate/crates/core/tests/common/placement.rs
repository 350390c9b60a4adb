//! Replicas fed hand-built rooms, for placement properties.

use std::collections::BTreeMap;

use proptest::prelude::*;
use surface_sync_core::geo::{GeoPoint, QrWorldPose, ViewState};
use surface_sync_core::protocol::*;
use surface_sync_core::replica::Placement;

use super::view;

pub fn welcome(v: ViewState, snapshot: Vec<ArObject>) -> Envelope {
    Envelope::new(
        "s1",
        "server",
        1,
        0,
        Message::Welcome(Welcome {
            client_id: "c1".into(),
            role: ClientRole::ArClient,
            view: v,
            snapshot,
            calibration: CalibrationMeta {
                session: "s1".into(),
                qr_screen_px: [120.0, 960.0],
                qr_rendered_side_px: 200.0,
                qr_physical_side_m: 0.1,
            },
        }),
    )
}

pub fn marker(i: usize, g: GeoPoint, alt: f64) -> ArObject {
    ArObject {
        object_id: format!("m/x/{i:03}"),
        kind: ObjectKind::VesselMarker,
        geo: Some(g),
        screen_px: None,
        altitude_m: alt,
        scope: Scope::Shared,
        version: 1,
        attrs: BTreeMap::new(),
    }
}

pub fn arb_view() -> impl Strategy<Value = ViewState> {
    (-60.0..60.0f64, -170.0..170.0f64, 1.0..18.0f64, -180.0..180.0f64).prop_map(|(lat, lon, z, b)| view(lat, lon, z, b, 1920, 1080))
}

pub fn arb_placement() -> impl Strategy<Value = Placement> {
    (-5.0..5.0f64, -1.0..2.0f64, -5.0..5.0f64, -180.0..180.0f64).prop_map(|(x, y, z, yaw)| Placement {
        qr_pose: QrWorldPose { origin: [x, y, z], yaw_deg: yaw },
        table_normal: [0.0, 1.0, 0.0],
    })
}

/// Markers within a few screen widths of the view center.
pub fn arb_markers(v: ViewState) -> impl Strategy<Value = Vec<ArObject>> {
    let span = 360.0 / 2f64.powf(v.zoom);
    prop::collection::vec((-span..span, -span..span, 0.0..0.5f64), 1..20).prop_map(move |d| {
        d.into_iter()
            .enumerate()
            .map(|(i, (dl, dn, alt))| {
                let g = GeoPoint { lat: (v.center.lat + dl / 2.0).clamp(-80.0, 80.0), lon: v.center.lon + dn };
                marker(i, g.clamp_mercator(), alt)
            })
            .collect()
    })
}
