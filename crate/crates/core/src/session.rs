//! Authoritative session state.
//!
//! [`Session`] is a pure state machine: every input (connect, text frame,
//! disconnect, heartbeat tick, TUIO packet) is applied in one serialized
//! order and yields the frames to send. The network layer only moves bytes;
//! recording the inputs is enough to replay a run exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datastore::{AssetRecord, AttrValue, DataError, Store};
use crate::geo::{geo_to_screen, GeoBounds, GeoPoint, ViewState};
use crate::protocol::{
    check_sequence, decode, gap_tolerant, ArObject, CalibrationMeta, ClientRole, Envelope, ErrorCode, ErrorMsg,
    Hello, Interaction, InteractionKind, Message, ObjectDespawn, ObjectFields, ObjectKind, ObjectUpdate,
    QueryResult, QuerySubmit, Scope, SeqCheck, Welcome, SERVER_SENDER,
};
use crate::query;
use crate::tuio::{decode_osc, GestureOutput, TuioBridge};

pub type ConnId = u64;

pub const DEFAULT_ARC_HEIGHT_M: f64 = 0.25;
pub const MARKER_ALTITUDE_M: f64 = 0.05;
pub const PANEL_ALTITUDE_M: f64 = 0.15;
pub const MAX_MISSED_PONGS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub max_clients: usize,
    pub arc_height_m: f64,
    pub calibration: CalibrationMeta,
    pub initial_view: ViewState,
    /// Query-builder widget position used when a selection names none.
    pub default_widget_px: [f64; 2],
    pub tuio_region_side_deg: f64,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, initial_view: ViewState) -> Self {
        let session_id = session_id.into();
        let h = initial_view.screen_h as f64;
        let w = initial_view.screen_w as f64;
        Self {
            calibration: CalibrationMeta {
                session: session_id.clone(),
                qr_screen_px: [120.0, h - 120.0],
                qr_rendered_side_px: 200.0,
                qr_physical_side_m: 0.10,
            },
            session_id,
            max_clients: 16,
            arc_height_m: DEFAULT_ARC_HEIGHT_M,
            initial_view,
            default_widget_px: [w - 200.0, 160.0],
            tuio_region_side_deg: crate::tuio::DEFAULT_REGION_SIDE_DEG,
        }
    }
}

/// One serialized input to the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum Input {
    Connect { conn: ConnId },
    Frame { conn: ConnId, text: String },
    Disconnect { conn: ConnId },
    /// Heartbeat interval elapsed.
    Tick,
    Tuio { packet: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub input: Input,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Send { conn: ConnId, env: Envelope },
    Close { conn: ConnId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub client_id: String,
    pub role: ClientRole,
    pub name: String,
    pub subscribe_views: bool,
}

#[derive(Debug, Clone, Default)]
struct Conn {
    last_seq: u64,
    out_seq: u64,
    missed_pongs: u32,
    client: Option<ClientInfo>,
}

/// Server state as written by `/dump` and read by the consistency checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDump {
    pub session: String,
    pub view: ViewState,
    pub clients: Vec<ClientInfo>,
    pub objects: Vec<ArObject>,
    /// Record ids of each requester's current result layer.
    pub result_layers: BTreeMap<String, Vec<String>>,
}

pub fn marker_id(client: &str, record: &str) -> String {
    format!("m/{client}/{record}")
}

pub fn panel_id(marker: &str) -> String {
    format!("panel/{marker}")
}

pub fn menu_id(client: &str) -> String {
    format!("menu/{client}")
}

pub struct Session {
    cfg: SessionConfig,
    store: Arc<Store>,
    view: ViewState,
    conns: BTreeMap<ConnId, Conn>,
    objects: BTreeMap<String, ArObject>,
    /// Last version of despawned ids, so a respawn continues upward.
    retired: BTreeMap<String, u64>,
    layers: BTreeMap<String, BTreeSet<String>>,
    next_client: u64,
    next_arc: u64,
    tuio: TuioBridge,
    journal: Option<Vec<JournalEntry>>,
}

fn attr_json(v: &AttrValue) -> serde_json::Value {
    match v {
        AttrValue::Num(n) => json!(n),
        AttrValue::Str(s) => json!(s),
    }
}

fn px_json(p: [f64; 2]) -> serde_json::Value {
    json!([p[0], p[1]])
}

impl Session {
    pub fn new(cfg: SessionConfig, store: Arc<Store>) -> Self {
        let tuio = TuioBridge::new(cfg.tuio_region_side_deg);
        Self {
            view: cfg.initial_view,
            cfg,
            store,
            conns: BTreeMap::new(),
            objects: BTreeMap::new(),
            retired: BTreeMap::new(),
            layers: BTreeMap::new(),
            next_client: 1,
            next_arc: 1,
            tuio,
            journal: None,
        }
    }

    /// Starts recording every input for later replay.
    pub fn record_journal(&mut self) {
        self.journal.get_or_insert_with(Vec::new);
    }

    pub fn journal(&self) -> Option<&[JournalEntry]> {
        self.journal.as_deref()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn view(&self) -> &ViewState {
        &self.view
    }

    pub fn objects(&self) -> &BTreeMap<String, ArObject> {
        &self.objects
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Swaps in a freshly ingested dataset. Existing markers are untouched.
    pub fn set_store(&mut self, store: Arc<Store>) {
        self.store = store;
    }

    pub fn clients(&self) -> Vec<ClientInfo> {
        let mut v: Vec<ClientInfo> = self.conns.values().filter_map(|c| c.client.clone()).collect();
        v.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        v
    }

    pub fn client_of(&self, conn: ConnId) -> Option<&ClientInfo> {
        self.conns.get(&conn).and_then(|c| c.client.as_ref())
    }

    /// SHARED objects plus the PRIVATE objects owned by `client`, by id.
    pub fn snapshot_for(&self, client: &str) -> Vec<ArObject> {
        self.objects
            .values()
            .filter(|o| o.scope.visible_to(client))
            .cloned()
            .collect()
    }

    pub fn dump(&self) -> SessionDump {
        SessionDump {
            session: self.cfg.session_id.clone(),
            view: self.view,
            clients: self.clients(),
            objects: self.objects.values().cloned().collect(),
            result_layers: self
                .layers
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
        }
    }

    pub fn apply(&mut self, input: Input, now_ms: u64) -> Vec<Outbound> {
        if let Some(j) = &mut self.journal {
            j.push(JournalEntry {
                at_ms: now_ms,
                input: input.clone(),
            });
        }
        let mut out = Vec::new();
        match input {
            Input::Connect { conn } => {
                self.conns.entry(conn).or_default();
            }
            Input::Frame { conn, text } => self.on_frame(conn, &text, now_ms, &mut out),
            Input::Disconnect { conn } => self.on_disconnect(conn, now_ms, &mut out),
            Input::Tick => self.on_tick(now_ms, &mut out),
            Input::Tuio { packet } => self.on_tuio(&packet, now_ms, &mut out),
        }
        out
    }

    /// Re-runs a recorded journal on a fresh session.
    pub fn replay(cfg: SessionConfig, store: Arc<Store>, journal: &[JournalEntry]) -> (Self, Vec<Outbound>) {
        let mut s = Self::new(cfg, store);
        let mut out = Vec::new();
        for e in journal {
            out.extend(s.apply(e.input.clone(), e.at_ms));
        }
        (s, out)
    }

    fn send(&mut self, conn: ConnId, body: Message, now: u64, out: &mut Vec<Outbound>) {
        let Some(c) = self.conns.get_mut(&conn) else {
            return;
        };
        c.out_seq += 1;
        out.push(Outbound::Send {
            conn,
            env: Envelope::new(&self.cfg.session_id, SERVER_SENDER, c.out_seq, now, body),
        });
    }

    fn error(&mut self, conn: ConnId, code: ErrorCode, detail: impl Into<String>, ref_seq: Option<u64>, position: Option<usize>, now: u64, out: &mut Vec<Outbound>) {
        let detail = detail.into();
        tracing::info!(event = "error_reply", session = %self.cfg.session_id, conn, code = code.as_str(), %detail);
        self.send(
            conn,
            Message::Error(ErrorMsg {
                code,
                detail,
                ref_seq,
                position,
            }),
            now,
            out,
        );
    }

    fn joined_conns(&self) -> Vec<(ConnId, ClientInfo)> {
        self.conns
            .iter()
            .filter_map(|(id, c)| c.client.clone().map(|ci| (*id, ci)))
            .collect()
    }

    fn conn_of_role(&self, role: ClientRole) -> Option<ConnId> {
        self.conns
            .iter()
            .find(|(_, c)| c.client.as_ref().is_some_and(|ci| ci.role == role))
            .map(|(id, _)| *id)
    }

    fn on_frame(&mut self, conn: ConnId, text: &str, now: u64, out: &mut Vec<Outbound>) {
        if !self.conns.contains_key(&conn) {
            self.conns.insert(conn, Conn::default());
        }
        let env = match decode(text.as_bytes()) {
            Ok(e) => e,
            Err(e) => {
                self.error(conn, e.code(), e.to_string(), None, None, now, out);
                return;
            }
        };
        let last = self.conns[&conn].last_seq;
        match check_sequence(last, &env) {
            SeqCheck::Duplicate => {
                tracing::info!(event = "duplicate_frame", session = %self.cfg.session_id, conn, seq = env.seq, last);
                return;
            }
            SeqCheck::Gap(n) => {
                self.conns.get_mut(&conn).expect("conn").last_seq = env.seq;
                tracing::warn!(event = "sequence_gap", session = %self.cfg.session_id, conn, seq = env.seq, missing = n, r#type = env.type_tag());
                if !gap_tolerant(&env.body) {
                    self.error(conn, ErrorCode::SequenceGap, format!("{n} frame(s) missing before seq {}", env.seq), Some(env.seq), None, now, out);
                    return;
                }
            }
            SeqCheck::Accept => self.conns.get_mut(&conn).expect("conn").last_seq = env.seq,
        }
        if env.session != self.cfg.session_id {
            self.error(conn, ErrorCode::SchemaViolation, format!("session {:?} is not {:?}", env.session, self.cfg.session_id), Some(env.seq), None, now, out);
            return;
        }
        let client = self.conns[&conn].client.clone();
        tracing::debug!(event = "frame", session = %self.cfg.session_id, client = client.as_ref().map(|c| c.client_id.as_str()), seq = env.seq, r#type = env.type_tag());
        let Some(client) = client else {
            match &env.body {
                Message::Hello(h) => self.on_hello(conn, h.clone(), env.seq, now, out),
                Message::Ping => self.send(conn, Message::Pong, now, out),
                Message::Pong => self.conns.get_mut(&conn).expect("conn").missed_pongs = 0,
                _ => self.error(conn, ErrorCode::NotJoined, "send HELLO first", Some(env.seq), None, now, out),
            }
            return;
        };
        match &env.body {
            Message::Hello(_) => {
                self.error(conn, ErrorCode::AlreadyJoined, format!("already joined as {}", client.client_id), Some(env.seq), None, now, out)
            }
            Message::Ping => self.send(conn, Message::Pong, now, out),
            Message::Pong => self.conns.get_mut(&conn).expect("conn").missed_pongs = 0,
            Message::ViewUpdate(v) => {
                if client.role != ClientRole::SharedDisplay {
                    self.error(conn, ErrorCode::ForbiddenRole, "only the shared display sets the view", Some(env.seq), None, now, out);
                    return;
                }
                self.view = *v;
                let mut relay = env.clone();
                relay.sender = client.client_id.clone();
                for (other, ci) in self.joined_conns() {
                    if other != conn && ci.subscribe_views {
                        out.push(Outbound::Send {
                            conn: other,
                            env: relay.clone(),
                        });
                    }
                }
            }
            Message::QuerySubmit(q) => self.on_query(conn, &client, q, env.seq, now, out),
            Message::Interaction(i) => self.on_interaction(conn, &client, i, &env, now, out),
            Message::Welcome(_)
            | Message::QueryResult(_)
            | Message::ObjectSpawn(_)
            | Message::ObjectUpdate(_)
            | Message::ObjectDespawn(_)
            | Message::Error(_) => self.error(
                conn,
                ErrorCode::ForbiddenRole,
                format!("{} is server-originated", env.type_tag()),
                Some(env.seq),
                None,
                now,
                out,
            ),
        }
    }

    fn on_hello(&mut self, conn: ConnId, h: Hello, seq: u64, now: u64, out: &mut Vec<Outbound>) {
        if h.role == ClientRole::SharedDisplay && self.conn_of_role(ClientRole::SharedDisplay).is_some() {
            self.error(conn, ErrorCode::RoleConflict, "a shared display is already connected", Some(seq), None, now, out);
            return;
        }
        if self.joined_conns().len() >= self.cfg.max_clients {
            self.error(conn, ErrorCode::SessionFull, format!("session holds at most {} clients", self.cfg.max_clients), Some(seq), None, now, out);
            return;
        }
        let client_id = format!("c{}", self.next_client);
        self.next_client += 1;
        let info = ClientInfo {
            client_id: client_id.clone(),
            role: h.role,
            name: h.name,
            subscribe_views: h.subscribe_views.unwrap_or(true),
        };
        tracing::info!(event = "join", session = %self.cfg.session_id, client = %client_id, role = ?info.role, seq);
        self.conns.get_mut(&conn).expect("conn").client = Some(info);
        let welcome = Welcome {
            client_id: client_id.clone(),
            role: h.role,
            view: self.view,
            snapshot: self.snapshot_for(&client_id),
            calibration: self.cfg.calibration.clone(),
        };
        self.send(conn, Message::Welcome(welcome), now, out);
    }

    fn on_disconnect(&mut self, conn: ConnId, now: u64, out: &mut Vec<Outbound>) {
        let Some(c) = self.conns.remove(&conn) else {
            return;
        };
        let Some(ci) = c.client else {
            return;
        };
        tracing::info!(event = "leave", session = %self.cfg.session_id, client = %ci.client_id);
        let private: Vec<String> = self
            .objects
            .values()
            .filter(|o| matches!(&o.scope, Scope::Private { owner } if *owner == ci.client_id))
            .map(|o| o.object_id.clone())
            .collect();
        for id in private {
            self.despawn(&id, now, out);
        }
        let held: Vec<String> = self
            .objects
            .values()
            .filter(|o| o.kind == ObjectKind::DetailPanel && o.attrs.get("held_by") == Some(&json!(ci.client_id)))
            .map(|o| o.object_id.clone())
            .collect();
        for id in held {
            self.set_holder(&id, None, now, out);
        }
    }

    fn on_tick(&mut self, now: u64, out: &mut Vec<Outbound>) {
        let conns: Vec<ConnId> = self.conns.keys().copied().collect();
        for conn in conns {
            let missed = self.conns[&conn].missed_pongs;
            if missed >= MAX_MISSED_PONGS {
                out.push(Outbound::Close {
                    conn,
                    reason: format!("{missed} heartbeats unanswered"),
                });
                self.on_disconnect(conn, now, out);
            } else {
                self.conns.get_mut(&conn).expect("conn").missed_pongs += 1;
                self.send(conn, Message::Ping, now, out);
            }
        }
    }

    fn on_tuio(&mut self, packet: &[u8], now: u64, out: &mut Vec<Outbound>) {
        let frame = match decode_osc(packet) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(event = "tuio_rejected", session = %self.cfg.session_id, error = %e);
                return;
            }
        };
        for g in self.tuio.handle(&frame, &self.view.clone()) {
            match g {
                GestureOutput::View(v) => {
                    self.view = v;
                    for (conn, ci) in self.joined_conns() {
                        if ci.subscribe_views {
                            self.send(conn, Message::ViewUpdate(v), now, out);
                        }
                    }
                }
                GestureOutput::SelectRegion { region, .. } => {
                    self.spawn_arc(region, None, SERVER_SENDER, now, out);
                    if let Some(sd) = self.conn_of_role(ClientRole::SharedDisplay) {
                        let body = Message::Interaction(Interaction {
                            kind: InteractionKind::SelectRegion,
                            target: None,
                            data: crate::protocol::InteractionData {
                                region: Some(region),
                                widget_px: Some(self.cfg.default_widget_px),
                                at_px: None,
                            },
                        });
                        self.send(sd, body, now, out);
                    }
                }
            }
        }
    }

    fn on_query(&mut self, conn: ConnId, client: &ClientInfo, q: &QuerySubmit, seq: u64, now: u64, out: &mut Vec<Outbound>) {
        let ast = match query::parse(&q.query_text()) {
            Ok(a) => a,
            Err(e) => {
                self.error(conn, ErrorCode::from(&e), e.to_string(), Some(seq), e.position(), now, out);
                return;
            }
        };
        let result = match self.store.evaluate(&ast) {
            Ok(r) => r,
            Err(e) => {
                let code = match e {
                    DataError::UnknownAttribute(_) => ErrorCode::UnknownAttribute,
                    _ => ErrorCode::InvalidQuery,
                };
                self.error(conn, code, e.to_string(), Some(seq), None, now, out);
                return;
            }
        };
        tracing::info!(event = "query", session = %self.cfg.session_id, client = %client.client_id, seq, total = result.total, returned = result.records.len());
        self.send(
            conn,
            Message::QueryResult(QueryResult {
                request_id: seq,
                total: result.total as u64,
                records: result.records.clone(),
            }),
            now,
            out,
        );
        if q.spawn.unwrap_or(true) {
            self.replace_layer(&client.client_id, &result.records, now, out);
        }
    }

    /// Makes the requester's markers match `records` exactly: stale
    /// markers go first, then re-found ones are bumped, then new ones spawn.
    fn replace_layer(&mut self, client: &str, records: &[AssetRecord], now: u64, out: &mut Vec<Outbound>) {
        let new: BTreeSet<String> = records.iter().map(|r| r.id.clone()).collect();
        let old = self.layers.remove(client).unwrap_or_default();
        for rid in old.difference(&new) {
            let mid = marker_id(client, rid);
            let pid = panel_id(&mid);
            if self.objects.contains_key(&pid) {
                self.despawn(&pid, now, out);
            }
            self.despawn(&mid, now, out);
        }
        for r in records {
            let mid = marker_id(client, &r.id);
            let mut attrs: BTreeMap<String, serde_json::Value> =
                r.attrs.iter().map(|(k, v)| (k.clone(), attr_json(v))).collect();
            attrs.insert("record_id".into(), json!(r.id));
            attrs.insert("requester".into(), json!(client));
            attrs.insert("ts".into(), json!(r.ts.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)));
            if old.contains(&r.id) && self.objects.contains_key(&mid) {
                self.update(
                    &mid,
                    ObjectFields {
                        geo: Some(r.pos),
                        attrs: Some(attrs),
                        ..Default::default()
                    },
                    now,
                    out,
                );
            } else {
                self.spawn(
                    ArObject {
                        object_id: mid,
                        kind: ObjectKind::VesselMarker,
                        geo: Some(r.pos),
                        screen_px: None,
                        altitude_m: MARKER_ALTITUDE_M,
                        scope: Scope::Shared,
                        version: 0,
                        attrs,
                    },
                    now,
                    out,
                );
            }
        }
        self.layers.insert(client.to_string(), new);
    }

    fn on_interaction(&mut self, conn: ConnId, client: &ClientInfo, i: &Interaction, env: &Envelope, now: u64, out: &mut Vec<Outbound>) {
        let seq = env.seq;
        let me = client.client_id.as_str();
        match i.kind {
            InteractionKind::MenuOpen => {
                let id = menu_id(me);
                let at = i.data.at_px.unwrap_or_else(|| self.view.screen_center());
                let mut attrs = BTreeMap::new();
                if let Some(t) = &i.target {
                    attrs.insert("target".to_string(), json!(t));
                }
                if self.objects.contains_key(&id) {
                    self.update(
                        &id,
                        ObjectFields {
                            screen_px: Some(at),
                            attrs: Some(attrs),
                            ..Default::default()
                        },
                        now,
                        out,
                    );
                } else {
                    self.spawn(
                        ArObject {
                            object_id: id,
                            kind: ObjectKind::Menu,
                            geo: None,
                            screen_px: Some(at),
                            altitude_m: PANEL_ALTITUDE_M,
                            scope: Scope::Private { owner: me.to_string() },
                            version: 0,
                            attrs,
                        },
                        now,
                        out,
                    );
                }
            }
            InteractionKind::Grab | InteractionKind::Release => {
                let Some(target) = i.target.as_deref().filter(|t| self.objects.get(*t).is_some_and(|o| o.scope.visible_to(me))) else {
                    self.error(conn, ErrorCode::UnknownTarget, format!("no object {:?}", i.target.as_deref().unwrap_or("")), Some(seq), None, now, out);
                    return;
                };
                let obj = self.objects[target].clone();
                if obj.kind == ObjectKind::Menu {
                    if i.kind == InteractionKind::Release {
                        self.despawn(target, now, out);
                    } else {
                        self.error(conn, ErrorCode::UnknownTarget, "menus cannot be grabbed", Some(seq), None, now, out);
                    }
                    return;
                }
                let marker = match obj.kind {
                    ObjectKind::VesselMarker => obj.object_id.clone(),
                    ObjectKind::DetailPanel => match obj.attrs.get("marker").and_then(|v| v.as_str()) {
                        Some(m) => m.to_string(),
                        None => return,
                    },
                    _ => {
                        self.error(conn, ErrorCode::UnknownTarget, format!("{target} cannot be grabbed"), Some(seq), None, now, out);
                        return;
                    }
                };
                let pid = panel_id(&marker);
                let holder = self
                    .objects
                    .get(&pid)
                    .and_then(|p| p.attrs.get("held_by"))
                    .and_then(|v| v.as_str())
                    .map(str::to_string);
                if i.kind == InteractionKind::Release {
                    if holder.as_deref() != Some(me) {
                        self.error(conn, ErrorCode::NotHolder, format!("{pid} is not held by {me}"), Some(seq), None, now, out);
                        return;
                    }
                    self.set_holder(&pid, None, now, out);
                    return;
                }
                match holder.as_deref() {
                    Some(h) if h != me => {
                        self.error(conn, ErrorCode::AlreadyHeld, format!("{pid} is held by {h}"), Some(seq), None, now, out);
                    }
                    Some(_) => {
                        // Holder drags the panel to a table position.
                        if let Some(at) = i.data.at_px {
                            self.update(
                                &pid,
                                ObjectFields {
                                    screen_px: Some(at),
                                    ..Default::default()
                                },
                                now,
                                out,
                            );
                        }
                    }
                    None if self.objects.contains_key(&pid) => self.set_holder(&pid, Some(me), now, out),
                    None => {
                        let m = self.objects[&marker].clone();
                        let mut attrs = m.attrs.clone();
                        attrs.insert("marker".into(), json!(marker));
                        attrs.insert("held_by".into(), json!(me));
                        self.spawn(
                            ArObject {
                                object_id: pid,
                                kind: ObjectKind::DetailPanel,
                                geo: m.geo,
                                screen_px: m.screen_px,
                                altitude_m: PANEL_ALTITUDE_M,
                                scope: Scope::Shared,
                                version: 0,
                                attrs,
                            },
                            now,
                            out,
                        );
                    }
                }
            }
            InteractionKind::SelectRegion => {
                let Some(region) = i.data.region else {
                    self.error(conn, ErrorCode::SchemaViolation, "SELECT_REGION needs data.region", Some(seq), None, now, out);
                    return;
                };
                if region.wraps_antimeridian() {
                    self.error(conn, ErrorCode::InvalidQuery, "antimeridian-wrapping regions are not supported", Some(seq), None, now, out);
                    return;
                }
                if geo_to_screen(&self.view, region.centroid()).is_err() {
                    self.error(conn, ErrorCode::InvalidQuery, "region centroid outside the Mercator band", Some(seq), None, now, out);
                    return;
                }
                self.spawn_arc(region, i.data.widget_px, me, now, out);
                if client.role != ClientRole::SharedDisplay {
                    if let Some(sd) = self.conn_of_role(ClientRole::SharedDisplay) {
                        let mut relay = env.clone();
                        relay.sender = me.to_string();
                        out.push(Outbound::Send { conn: sd, env: relay });
                    }
                }
            }
        }
    }

    fn set_holder(&mut self, pid: &str, holder: Option<&str>, now: u64, out: &mut Vec<Outbound>) {
        let mut attrs = self.objects[pid].attrs.clone();
        attrs.insert("held_by".into(), holder.map_or(serde_json::Value::Null, |h| json!(h)));
        self.update(
            pid,
            ObjectFields {
                attrs: Some(attrs),
                ..Default::default()
            },
            now,
            out,
        );
    }

    fn spawn_arc(&mut self, region: GeoBounds, widget_px: Option<[f64; 2]>, by: &str, now: u64, out: &mut Vec<Outbound>) {
        let id = format!("arc/{}", self.next_arc);
        self.next_arc += 1;
        let p2 = widget_px.unwrap_or(self.cfg.default_widget_px);
        let Ok(obj) = arc_connector(id, &self.view, region, p2, self.cfg.arc_height_m, by) else {
            return;
        };
        self.spawn(obj, now, out);
    }

    fn broadcast(&mut self, scope: &Scope, body: Message, now: u64, out: &mut Vec<Outbound>) {
        for (conn, ci) in self.joined_conns() {
            if scope.visible_to(&ci.client_id) {
                self.send(conn, body.clone(), now, out);
            }
        }
    }

    fn spawn(&mut self, mut obj: ArObject, now: u64, out: &mut Vec<Outbound>) {
        obj.version = self.retired.remove(&obj.object_id).unwrap_or(0) + 1;
        tracing::debug!(event = "spawn", session = %self.cfg.session_id, object = %obj.object_id, version = obj.version);
        self.objects.insert(obj.object_id.clone(), obj.clone());
        let scope = obj.scope.clone();
        self.broadcast(&scope, Message::ObjectSpawn(obj), now, out);
    }

    fn update(&mut self, id: &str, fields: ObjectFields, now: u64, out: &mut Vec<Outbound>) {
        let Some(obj) = self.objects.get_mut(id) else {
            return;
        };
        let version = obj.version + 1;
        obj.apply(version, &fields);
        let scope = obj.scope.clone();
        self.broadcast(
            &scope,
            Message::ObjectUpdate(ObjectUpdate {
                object_id: id.to_string(),
                version,
                fields,
            }),
            now,
            out,
        );
    }

    fn despawn(&mut self, id: &str, now: u64, out: &mut Vec<Outbound>) {
        let Some(obj) = self.objects.remove(id) else {
            return;
        };
        self.retired.insert(id.to_string(), obj.version);
        self.broadcast(
            &obj.scope,
            Message::ObjectDespawn(ObjectDespawn {
                object_id: id.to_string(),
            }),
            now,
            out,
        );
    }
}

/// A SHARED arc from the region centroid (P0) to the widget (P2). The
/// control point P1 is the screen midpoint, lifted `arc_height_m` along
/// the table normal. The object is anchored at the widget; the region and
/// centroid ride along so clients can re-resolve P0 after the view moves.
pub fn arc_connector(
    object_id: String,
    view: &ViewState,
    region: GeoBounds,
    widget_px: [f64; 2],
    arc_height_m: f64,
    by: &str,
) -> Result<ArObject, crate::geo::GeoError> {
    let c: GeoPoint = region.centroid();
    let p0 = geo_to_screen(view, c)?;
    let p2 = widget_px;
    let p1 = [(p0[0] + p2[0]) / 2.0, (p0[1] + p2[1]) / 2.0];
    let mut attrs = BTreeMap::new();
    attrs.insert("by".into(), json!(by));
    attrs.insert("centroid".into(), json!({"lat": c.lat, "lon": c.lon}));
    attrs.insert("p0_px".into(), px_json(p0));
    attrs.insert("p1_lift_m".into(), json!(arc_height_m));
    attrs.insert("p1_px".into(), px_json(p1));
    attrs.insert("p2_px".into(), px_json(p2));
    attrs.insert(
        "region".into(),
        json!({"nw": [region.north(), region.west()], "se": [region.south(), region.east()]}),
    );
    Ok(ArObject {
        object_id,
        kind: ObjectKind::ArcConnector,
        geo: None,
        screen_px: Some(p2),
        altitude_m: 0.0,
        scope: Scope::Shared,
        version: 1,
        attrs,
    })
}
