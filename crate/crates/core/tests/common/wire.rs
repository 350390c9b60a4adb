//! Envelope strategies and the documented frames of `docs/protocol.md`.

use std::collections::BTreeMap;

use proptest::prelude::*;
use surface_sync_core::datastore::{AssetRecord, AttrValue};
use surface_sync_core::geo::{GeoPoint, ViewState};
use surface_sync_core::protocol::*;
use surface_sync_core::query::Dialect;

use super::{arb_region, arb_time};

pub const PROTOCOL_DOC: &str = include_str!("../../../../docs/protocol.md");

pub fn fenced(doc: &str, lang: &str) -> Vec<String> {
    let open = format!("```{lang}");
    let mut out = Vec::new();
    let mut inside = false;
    for line in doc.lines() {
        if inside {
            if line.starts_with("```") {
                inside = false;
            } else if !line.trim().is_empty() {
                out.push(line.to_string());
            }
        } else if line.trim_end() == open {
            inside = true;
        }
    }
    out
}

pub fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9/_-]{0,10}"
}

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[ -~]{1,20}", any::<String>()].prop_filter("non-blank", |s| !s.trim().is_empty())
}

pub fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(lat, lon)| GeoPoint { lat, lon })
}

pub fn px() -> impl Strategy<Value = [f64; 2]> {
    (-1e4..1e4f64, -1e4..1e4f64).prop_map(|(x, y)| [x, y])
}

pub fn view() -> impl Strategy<Value = ViewState> {
    (-80.0..80.0f64, -180.0..=180.0f64, 0.0..20.0f64, 0.0..360.0f64, 1u32..4000, 1u32..4000)
        .prop_map(|(lat, lon, z, b, w, h)| ViewState::new(GeoPoint { lat, lon }, z, b, w, h).unwrap())
}

pub fn json_value() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        any::<i64>().prop_map(serde_json::Value::from),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(serde_json::Value::from),
        text().prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(serde_json::Value::from),
            prop::collection::btree_map(ident(), inner, 0..3)
                .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
        ]
    })
}

pub fn attrs() -> impl Strategy<Value = BTreeMap<String, serde_json::Value>> {
    prop::collection::btree_map(ident(), json_value(), 0..4)
}

pub fn scope() -> impl Strategy<Value = Scope> {
    prop_oneof![Just(Scope::Shared), ident().prop_map(|owner| Scope::Private { owner })]
}

pub fn kind() -> impl Strategy<Value = ObjectKind> {
    prop_oneof![
        Just(ObjectKind::VesselMarker),
        Just(ObjectKind::ArcConnector),
        Just(ObjectKind::DetailPanel),
        Just(ObjectKind::Menu),
    ]
}

pub fn object() -> impl Strategy<Value = ArObject> {
    (ident(), kind(), prop_oneof![point().prop_map(Ok), px().prop_map(Err)], -10.0..10.0f64, scope(), 1u64..u64::MAX, attrs())
        .prop_map(|(object_id, kind, anchor, altitude_m, scope, version, attrs)| ArObject {
            object_id,
            kind,
            geo: anchor.ok(),
            screen_px: anchor.err(),
            altitude_m,
            scope,
            version,
            attrs,
        })
}

pub fn record() -> impl Strategy<Value = AssetRecord> {
    let value = prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(AttrValue::Num),
        text().prop_map(AttrValue::Str),
    ];
    (ident(), point(), arb_time(), prop::collection::btree_map("[a-z_]{1,6}", value, 0..4))
        .prop_map(|(id, pos, ts, attrs)| AssetRecord { id, pos, ts, attrs })
}

pub fn role() -> impl Strategy<Value = ClientRole> {
    prop_oneof![Just(ClientRole::SharedDisplay), Just(ClientRole::ArClient), Just(ClientRole::ExternalDevice)]
}

pub fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::RoleConflict,
        ErrorCode::SessionFull,
        ErrorCode::ForbiddenRole,
        ErrorCode::NotJoined,
        ErrorCode::AlreadyJoined,
        ErrorCode::UnknownTarget,
        ErrorCode::AlreadyHeld,
        ErrorCode::NotHolder,
        ErrorCode::SequenceGap,
        ErrorCode::UnsupportedDialect,
        ErrorCode::UnsupportedFeature,
        ErrorCode::ParseError,
        ErrorCode::InvalidQuery,
        ErrorCode::UnknownAttribute,
        ErrorCode::MalformedJson,
        ErrorCode::UnknownType,
        ErrorCode::SchemaViolation,
    ])
}

pub fn message() -> impl Strategy<Value = Message> {
    let calibration = (ident(), px(), 1.0..1000.0f64, 0.01..1.0f64).prop_map(|(session, qr_screen_px, side, m)| CalibrationMeta {
        session,
        qr_screen_px,
        qr_rendered_side_px: side,
        qr_physical_side_m: m,
    });
    let interaction_kind = prop_oneof![
        Just(InteractionKind::Grab),
        Just(InteractionKind::Release),
        Just(InteractionKind::MenuOpen),
        Just(InteractionKind::SelectRegion),
    ];
    prop_oneof![
        (role(), text(), prop::option::of(any::<bool>()))
            .prop_map(|(role, name, subscribe_views)| Message::Hello(Hello { role, name, subscribe_views })),
        (ident(), role(), view(), prop::collection::vec(object(), 0..3), calibration).prop_map(
            |(client_id, role, view, snapshot, calibration)| Message::Welcome(Welcome { client_id, role, view, snapshot, calibration })
        ),
        view().prop_map(Message::ViewUpdate),
        (prop_oneof![Just(Dialect::Sparql), Just(Dialect::Sql), Just(Dialect::VisualJson)], text(), prop::option::of(any::<bool>()))
            .prop_map(|(dialect, text, spawn)| Message::QuerySubmit(QuerySubmit { dialect, text, spawn })),
        (any::<u64>(), prop::collection::vec(record(), 0..3), 0u64..1000).prop_map(|(request_id, records, extra)| {
            let total = records.len() as u64 + extra;
            Message::QueryResult(QueryResult { request_id, total, records })
        }),
        object().prop_map(Message::ObjectSpawn),
        (ident(), any::<u64>(), prop::option::of(prop_oneof![point().prop_map(Ok), px().prop_map(Err)]), prop::option::of(-5.0..5.0f64), prop::option::of(attrs()))
            .prop_map(|(object_id, version, anchor, altitude_m, attrs)| Message::ObjectUpdate(ObjectUpdate {
                object_id,
                version,
                fields: ObjectFields {
                    geo: anchor.and_then(Result::ok),
                    screen_px: anchor.and_then(Result::err),
                    altitude_m,
                    attrs,
                },
            })),
        ident().prop_map(|object_id| Message::ObjectDespawn(ObjectDespawn { object_id })),
        (interaction_kind, prop::option::of(ident()), prop::option::of(arb_region()), prop::option::of(px()), prop::option::of(px()))
            .prop_map(|(kind, target, region, widget_px, at_px)| Message::Interaction(Interaction {
                kind,
                target,
                data: InteractionData { region, widget_px, at_px },
            })),
        (error_code(), any::<String>(), prop::option::of(any::<u64>()), prop::option::of(0usize..10_000))
            .prop_map(|(code, detail, ref_seq, position)| Message::Error(ErrorMsg { code, detail, ref_seq, position })),
        Just(Message::Ping),
        Just(Message::Pong),
    ]
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (ident(), text(), any::<u64>(), any::<u64>(), message())
        .prop_map(|(session, sender, seq, ts, body)| Envelope::new(session, sender, seq, ts, body))
}
