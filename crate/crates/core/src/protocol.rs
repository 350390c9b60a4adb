//! Wire contract: one JSON envelope per websocket text frame.
//!
//! Top-level keys are always written in the order
//! `type, session, sender, seq, ts, payload`; payload keys follow the
//! declaration order of the payload structs and absent optionals are
//! omitted. Unknown top-level keys are rejected; unknown payload keys are
//! ignored and counted (see [`ignored_payload_fields`]).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::AssetRecord;
use crate::geo::{GeoBounds, GeoPoint, ViewState};
use crate::query::{Dialect, QueryError, QueryText};

pub const SUBPROTOCOL: &str = "surface-sync.v1";
pub const WS_PATH: &str = "/ws";
pub const SERVER_SENDER: &str = "server";

const TOP_LEVEL_KEYS: [&str; 6] = ["type", "session", "sender", "seq", "ts", "payload"];

static IGNORED_PAYLOAD_FIELDS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of unknown payload fields skipped by [`decode`].
pub fn ignored_payload_fields() -> u64 {
    IGNORED_PAYLOAD_FIELDS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientRole {
    SharedDisplay,
    ArClient,
    ExternalDevice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectKind {
    VesselMarker,
    ArcConnector,
    DetailPanel,
    Menu,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scope {
    Shared,
    Private { owner: String },
}

impl Scope {
    pub fn visible_to(&self, client: &str) -> bool {
        match self {
            Scope::Shared => true,
            Scope::Private { owner } => owner == client,
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(self, Scope::Private { .. })
    }
}

/// A replicated scene entity. Exactly one of `geo` / `screen_px` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArObject {
    pub object_id: String,
    pub kind: ObjectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_px: Option<[f64; 2]>,
    pub altitude_m: f64,
    pub scope: Scope,
    pub version: u64,
    #[serde(default)]
    pub attrs: BTreeMap<String, serde_json::Value>,
}

/// Changed fields of an [`ArObject`]. Setting `geo` or `screen_px`
/// re-anchors the object and clears the other.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altitude_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrs: Option<BTreeMap<String, serde_json::Value>>,
}

impl ArObject {
    pub fn apply(&mut self, version: u64, fields: &ObjectFields) {
        self.version = version;
        if let Some(g) = fields.geo {
            self.geo = Some(g);
            self.screen_px = None;
        }
        if let Some(px) = fields.screen_px {
            self.screen_px = Some(px);
            self.geo = None;
        }
        if let Some(a) = fields.altitude_m {
            self.altitude_m = a;
        }
        if let Some(attrs) = &fields.attrs {
            self.attrs = attrs.clone();
        }
    }
}

/// QR placard placement the shared display renders and AR clients
/// calibrate against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub session: String,
    pub qr_screen_px: [f64; 2],
    pub qr_rendered_side_px: f64,
    pub qr_physical_side_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: ClientRole,
    pub name: String,
    /// Whether view updates are delivered; absent means yes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscribe_views: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub client_id: String,
    pub role: ClientRole,
    pub view: ViewState,
    pub snapshot: Vec<ArObject>,
    pub calibration: CalibrationMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySubmit {
    pub dialect: Dialect,
    pub text: String,
    /// Spawn AR markers for the result; absent means yes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn: Option<bool>,
}

impl QuerySubmit {
    pub fn query_text(&self) -> QueryText {
        QueryText::new(self.dialect, self.text.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    /// `seq` of the QUERY_SUBMIT this answers.
    pub request_id: u64,
    pub total: u64,
    pub records: Vec<AssetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectUpdate {
    pub object_id: String,
    pub version: u64,
    pub fields: ObjectFields,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDespawn {
    pub object_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InteractionKind {
    Grab,
    Release,
    MenuOpen,
    SelectRegion,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractionData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<GeoBounds>,
    /// Screen position of the query-builder widget a region is linked to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widget_px: Option<[f64; 2]>,
    /// Screen position of the gesture (menu placement, drag target).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_px: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub data: InteractionData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    RoleConflict,
    SessionFull,
    ForbiddenRole,
    NotJoined,
    AlreadyJoined,
    UnknownTarget,
    AlreadyHeld,
    NotHolder,
    SequenceGap,
    UnsupportedDialect,
    UnsupportedFeature,
    ParseError,
    InvalidQuery,
    UnknownAttribute,
    MalformedJson,
    UnknownType,
    SchemaViolation,
}

impl From<&QueryError> for ErrorCode {
    fn from(e: &QueryError) -> Self {
        match e {
            QueryError::Syntax { .. } => ErrorCode::ParseError,
            QueryError::UnsupportedFeature(_) => ErrorCode::UnsupportedFeature,
            QueryError::UnsupportedDialect(_) => ErrorCode::UnsupportedDialect,
        }
    }
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::RoleConflict => "role_conflict",
            ErrorCode::SessionFull => "session_full",
            ErrorCode::ForbiddenRole => "forbidden_role",
            ErrorCode::NotJoined => "not_joined",
            ErrorCode::AlreadyJoined => "already_joined",
            ErrorCode::UnknownTarget => "unknown_target",
            ErrorCode::AlreadyHeld => "already_held",
            ErrorCode::NotHolder => "not_holder",
            ErrorCode::SequenceGap => "sequence_gap",
            ErrorCode::UnsupportedDialect => "unsupported_dialect",
            ErrorCode::UnsupportedFeature => "unsupported_feature",
            ErrorCode::ParseError => "parse_error",
            ErrorCode::InvalidQuery => "invalid_query",
            ErrorCode::UnknownAttribute => "unknown_attribute",
            ErrorCode::MalformedJson => "malformed_json",
            ErrorCode::UnknownType => "unknown_type",
            ErrorCode::SchemaViolation => "schema_violation",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub code: ErrorCode,
    pub detail: String,
    /// `seq` of the offending frame, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_seq: Option<u64>,
    /// Byte offset into a rejected query text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Welcome(Welcome),
    ViewUpdate(ViewState),
    QuerySubmit(QuerySubmit),
    QueryResult(QueryResult),
    ObjectSpawn(ArObject),
    ObjectUpdate(ObjectUpdate),
    ObjectDespawn(ObjectDespawn),
    Interaction(Interaction),
    Error(ErrorMsg),
    Ping,
    Pong,
}

pub const MESSAGE_TYPES: [&str; 12] = [
    "HELLO",
    "WELCOME",
    "VIEW_UPDATE",
    "QUERY_SUBMIT",
    "QUERY_RESULT",
    "OBJECT_SPAWN",
    "OBJECT_UPDATE",
    "OBJECT_DESPAWN",
    "INTERACTION",
    "ERROR",
    "PING",
    "PONG",
];

impl Message {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Message::Hello(_) => "HELLO",
            Message::Welcome(_) => "WELCOME",
            Message::ViewUpdate(_) => "VIEW_UPDATE",
            Message::QuerySubmit(_) => "QUERY_SUBMIT",
            Message::QueryResult(_) => "QUERY_RESULT",
            Message::ObjectSpawn(_) => "OBJECT_SPAWN",
            Message::ObjectUpdate(_) => "OBJECT_UPDATE",
            Message::ObjectDespawn(_) => "OBJECT_DESPAWN",
            Message::Interaction(_) => "INTERACTION",
            Message::Error(_) => "ERROR",
            Message::Ping => "PING",
            Message::Pong => "PONG",
        }
    }

    fn payload_json(&self) -> String {
        fn ser<T: Serialize>(v: &T) -> String {
            serde_json::to_string(v).expect("payload serializes")
        }
        match self {
            Message::Hello(p) => ser(p),
            Message::Welcome(p) => ser(p),
            Message::ViewUpdate(p) => ser(p),
            Message::QuerySubmit(p) => ser(p),
            Message::QueryResult(p) => ser(p),
            Message::ObjectSpawn(p) => ser(p),
            Message::ObjectUpdate(p) => ser(p),
            Message::ObjectDespawn(p) => ser(p),
            Message::Interaction(p) => ser(p),
            Message::Error(p) => ser(p),
            Message::Ping | Message::Pong => "{}".into(),
        }
    }

    /// Objects carried by this message that are PRIVATE, with their owner.
    pub fn private_owners(&self) -> Vec<&str> {
        fn owner(o: &ArObject) -> Option<&str> {
            match &o.scope {
                Scope::Private { owner } => Some(owner.as_str()),
                Scope::Shared => None,
            }
        }
        match self {
            Message::ObjectSpawn(o) => owner(o).into_iter().collect(),
            Message::Welcome(w) => w.snapshot.iter().filter_map(owner).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub session: String,
    pub sender: String,
    pub seq: u64,
    /// Sender clock, milliseconds.
    pub ts: u64,
    pub body: Message,
}

impl Envelope {
    pub fn new(session: impl Into<String>, sender: impl Into<String>, seq: u64, ts: u64, body: Message) -> Self {
        Self {
            session: session.into(),
            sender: sender.into(),
            seq,
            ts,
            body,
        }
    }

    pub fn type_tag(&self) -> &'static str {
        self.body.type_tag()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl ProtocolError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ProtocolError::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::MalformedJson(_) => ErrorCode::MalformedJson,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
            ProtocolError::SchemaViolation { .. } => ErrorCode::SchemaViolation,
        }
    }
}

/// Canonical encoding: equal envelopes give identical bytes.
pub fn encode(env: &Envelope) -> String {
    let s = |v: &str| serde_json::to_string(v).expect("string serializes");
    format!(
        r#"{{"type":"{}","session":{},"sender":{},"seq":{},"ts":{},"payload":{}}}"#,
        env.type_tag(),
        s(&env.session),
        s(&env.sender),
        env.seq,
        env.ts,
        env.body.payload_json()
    )
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    let (env, ignored) = decode_verbose(bytes)?;
    if !ignored.is_empty() {
        IGNORED_PAYLOAD_FIELDS.fetch_add(ignored.len() as u64, Ordering::Relaxed);
        tracing::warn!(event = "ignored_payload_fields", r#type = env.type_tag(), fields = ?ignored);
    }
    Ok(env)
}

/// Like [`decode`], also returning the paths of ignored payload fields
/// (without touching the global counter).
pub fn decode_verbose(bytes: &[u8]) -> Result<(Envelope, Vec<String>), ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(ProtocolError::schema("", "envelope must be a JSON object"));
    };
    if let Some(k) = map.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(ProtocolError::schema(k.clone(), "unknown top-level field"));
    }
    let tag = match map.get("type") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err(ProtocolError::schema("type", "expected a string")),
        None => return Err(ProtocolError::schema("type", "missing field")),
    };
    if !MESSAGE_TYPES.contains(&tag.as_str()) {
        return Err(ProtocolError::UnknownType(tag));
    }
    let string_field = |map: &serde_json::Map<String, serde_json::Value>, k: &str| match map.get(k) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ProtocolError::schema(k, "expected a string")),
        None => Err(ProtocolError::schema(k, "missing field")),
    };
    let u64_field = |map: &serde_json::Map<String, serde_json::Value>, k: &str| match map.get(k) {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ProtocolError::schema(k, "expected an unsigned integer")),
        None => Err(ProtocolError::schema(k, "missing field")),
    };
    let session = string_field(&map, "session")?;
    let sender = string_field(&map, "sender")?;
    let seq = u64_field(&map, "seq")?;
    let ts = u64_field(&map, "ts")?;
    let payload = match map.remove("payload") {
        Some(p @ serde_json::Value::Object(_)) => p,
        Some(_) => return Err(ProtocolError::schema("payload", "expected an object")),
        None => return Err(ProtocolError::schema("payload", "missing field")),
    };
    let mut ignored = Vec::new();
    let body = match tag.as_str() {
        "HELLO" => Message::Hello(payload_as(payload, &mut ignored)?),
        "WELCOME" => Message::Welcome(payload_as(payload, &mut ignored)?),
        "VIEW_UPDATE" => Message::ViewUpdate(payload_as(payload, &mut ignored)?),
        "QUERY_SUBMIT" => Message::QuerySubmit(payload_as(payload, &mut ignored)?),
        "QUERY_RESULT" => Message::QueryResult(payload_as(payload, &mut ignored)?),
        "OBJECT_SPAWN" => Message::ObjectSpawn(payload_as(payload, &mut ignored)?),
        "OBJECT_UPDATE" => Message::ObjectUpdate(payload_as(payload, &mut ignored)?),
        "OBJECT_DESPAWN" => Message::ObjectDespawn(payload_as(payload, &mut ignored)?),
        "INTERACTION" => Message::Interaction(payload_as(payload, &mut ignored)?),
        "ERROR" => Message::Error(payload_as(payload, &mut ignored)?),
        "PING" => {
            let Empty {} = payload_as(payload, &mut ignored)?;
            Message::Ping
        }
        "PONG" => {
            let Empty {} = payload_as(payload, &mut ignored)?;
            Message::Pong
        }
        _ => unreachable!("tag checked against MESSAGE_TYPES"),
    };
    validate_body(&body).map_err(|(path, reason)| ProtocolError::schema(format!("payload{path}"), reason))?;
    Ok((
        Envelope {
            session,
            sender,
            seq,
            ts,
            body,
        },
        ignored,
    ))
}

fn payload_as<T: DeserializeOwned>(payload: serde_json::Value, ignored: &mut Vec<String>) -> Result<T, ProtocolError> {
    let mut local = Vec::new();
    let mut record = |p: serde_ignored::Path<'_>| local.push(format!("payload.{p}"));
    let de = serde_ignored::Deserializer::new(payload, &mut record);
    let out = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "payload".into() } else { format!("payload.{path}") };
        ProtocolError::schema(path, e.into_inner().to_string())
    })?;
    ignored.extend(local);
    Ok(out)
}

type Violation = (String, String);

fn check_point(path: &str, p: &GeoPoint) -> Result<(), Violation> {
    if !(-90.0..=90.0).contains(&p.lat) {
        return Err((format!("{path}.lat"), format!("latitude {} outside [-90, 90]", p.lat)));
    }
    if !(-180.0..=180.0).contains(&p.lon) {
        return Err((format!("{path}.lon"), format!("longitude {} outside [-180, 180]", p.lon)));
    }
    Ok(())
}

fn check_bounds(path: &str, b: &GeoBounds) -> Result<(), Violation> {
    check_point(&format!("{path}.north_west"), &b.north_west)?;
    check_point(&format!("{path}.south_east"), &b.south_east)?;
    b.validate().map_err(|e| (path.to_string(), e.to_string()))
}

fn check_px(path: &str, px: &[f64; 2]) -> Result<(), Violation> {
    if px.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err((path.to_string(), "non-finite pixel coordinate".into()))
    }
}

fn check_view(path: &str, v: &ViewState) -> Result<(), Violation> {
    check_bounds(&format!("{path}.bounds"), &v.bounds)?;
    check_point(&format!("{path}.center"), &v.center)?;
    if !(v.zoom.is_finite() && v.zoom >= 0.0) {
        return Err((format!("{path}.zoom"), "zoom must be finite and >= 0".into()));
    }
    if !(0.0..360.0).contains(&v.orientation_deg) {
        return Err((format!("{path}.orientation_deg"), "bearing must be in [0, 360)".into()));
    }
    if v.screen_w == 0 {
        return Err((format!("{path}.screen_w"), "must be > 0".into()));
    }
    if v.screen_h == 0 {
        return Err((format!("{path}.screen_h"), "must be > 0".into()));
    }
    v.check_consistency()
        .map_err(|e| (format!("{path}.bounds"), e.to_string()))
}

fn check_object(path: &str, o: &ArObject) -> Result<(), Violation> {
    if o.object_id.is_empty() {
        return Err((format!("{path}.object_id"), "empty".into()));
    }
    match (&o.geo, &o.screen_px) {
        (Some(g), None) => check_point(&format!("{path}.geo"), g)?,
        (None, Some(px)) => check_px(&format!("{path}.screen_px"), px)?,
        _ => return Err((path.to_string(), "exactly one of geo, screen_px".into())),
    }
    if !o.altitude_m.is_finite() {
        return Err((format!("{path}.altitude_m"), "non-finite".into()));
    }
    Ok(())
}

fn validate_body(body: &Message) -> Result<(), Violation> {
    match body {
        Message::Hello(h) if h.name.is_empty() => Err((".name".into(), "empty".into())),
        Message::Welcome(w) => {
            check_view(".view", &w.view)?;
            for (i, o) in w.snapshot.iter().enumerate() {
                check_object(&format!(".snapshot[{i}]"), o)?;
            }
            Ok(())
        }
        Message::ViewUpdate(v) => check_view("", v),
        Message::QuerySubmit(q) if q.text.trim().is_empty() => Err((".text".into(), "empty query text".into())),
        Message::QueryResult(r) if r.total < r.records.len() as u64 => {
            Err((".total".into(), "total smaller than record count".into()))
        }
        Message::QueryResult(r) => {
            for (i, rec) in r.records.iter().enumerate() {
                check_point(&format!(".records[{i}].pos"), &rec.pos)?;
            }
            Ok(())
        }
        Message::ObjectSpawn(o) => check_object("", o),
        Message::ObjectUpdate(u) => {
            if u.fields.geo.is_some() && u.fields.screen_px.is_some() {
                return Err((".fields".into(), "at most one of geo, screen_px".into()));
            }
            if let Some(g) = &u.fields.geo {
                check_point(".fields.geo", g)?;
            }
            if let Some(px) = &u.fields.screen_px {
                check_px(".fields.screen_px", px)?;
            }
            Ok(())
        }
        Message::Interaction(i) => {
            if let Some(r) = &i.data.region {
                check_bounds(".data.region", r)?;
            }
            for (name, px) in [("widget_px", &i.data.widget_px), ("at_px", &i.data.at_px)] {
                if let Some(px) = px {
                    check_px(&format!(".data.{name}"), px)?;
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqCheck {
    Accept,
    Duplicate,
    /// Number of missing frames.
    Gap(u64),
}

/// `last_seq` is 0 before the first frame, so a fresh connection starts
/// at seq 1.
pub fn check_sequence(last_seq: u64, env: &Envelope) -> SeqCheck {
    if env.seq <= last_seq {
        SeqCheck::Duplicate
    } else if env.seq == last_seq + 1 {
        SeqCheck::Accept
    } else {
        SeqCheck::Gap(env.seq - last_seq - 1)
    }
}

/// Message types whose gaps are tolerated: they carry absolute state.
pub fn gap_tolerant(body: &Message) -> bool {
    matches!(body, Message::ViewUpdate(_) | Message::Ping | Message::Pong)
}
