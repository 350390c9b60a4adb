//! Scenario execution shared by the live websocket runner and the
//! in-process runner used in tests.
//!
//! [`Driver`] turns scenario steps into wire frames and keeps each actor's
//! seq counter, client id and view. [`run_in_process`] wires a driver
//! straight to a [`Session`], which makes a run fully deterministic.

use std::collections::BTreeMap;

use crate::checker::{Dir, TraceLine};
use crate::geo::{GeoPoint, ViewState};
use crate::protocol::{encode, Envelope, Hello, Interaction, Message, QuerySubmit};
use crate::scenario::{substitute, Action, Scenario, Step};
use crate::session::{ConnId, Input, Outbound, Session, SessionDump};

pub const DEFAULT_SCREEN: (u32, u32) = (1920, 1080);

#[derive(Debug, Clone, Default)]
pub struct ActorState {
    pub connected: bool,
    /// Connection index; the first join is 0.
    pub conn: u32,
    pub seq: u64,
    pub client_id: Option<String>,
    pub view: Option<ViewState>,
}

/// What a step asks the transport to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    /// Open a connection, then send the frame.
    Connect { frame: String },
    Send { frame: String },
    Close,
    Sleep { ms: u64 },
    /// Step not applicable (e.g. acting while disconnected).
    Skip { reason: String },
}

#[derive(Debug, Clone)]
pub struct Driver {
    pub session: String,
    pub actors: BTreeMap<String, ActorState>,
    joins: BTreeMap<String, u32>,
}

impl Driver {
    pub fn new(s: &Scenario) -> Self {
        Self {
            session: s.session.clone(),
            actors: s.actors.iter().map(|a| (a.name.clone(), ActorState::default())).collect(),
            joins: BTreeMap::new(),
        }
    }

    /// Current `{name}` → client id bindings.
    pub fn ids(&self) -> BTreeMap<String, String> {
        self.actors
            .iter()
            .filter_map(|(n, a)| a.client_id.clone().map(|id| (n.clone(), id)))
            .collect()
    }

    fn frame(&mut self, actor: &str, now: u64, body: Message) -> String {
        let a = self.actors.get_mut(actor).expect("declared actor");
        a.seq += 1;
        let sender = a.client_id.clone().unwrap_or_else(|| actor.to_string());
        encode(&Envelope::new(&self.session, sender, a.seq, now, body))
    }

    /// A PING from `actor`, used as a delivery barrier by live runners.
    pub fn ping(&mut self, actor: &str, now: u64) -> String {
        self.frame(actor, now, Message::Ping)
    }

    /// Answer to a server heartbeat.
    pub fn pong(&mut self, actor: &str, now: u64) -> String {
        self.frame(actor, now, Message::Pong)
    }

    pub fn plan(&mut self, scenario: &Scenario, step: &Step, now: u64) -> Plan {
        let connected = self.actors[&step.actor].connected;
        if !connected && !matches!(step.action, Action::Join | Action::Wait { .. }) {
            return Plan::Skip {
                reason: format!("{} is not connected", step.actor),
            };
        }
        let ids = self.ids();
        match &step.action {
            Action::Join => {
                if connected {
                    return Plan::Skip {
                        reason: format!("{} already joined", step.actor),
                    };
                }
                let role = scenario.actor(&step.actor).expect("declared actor").role;
                let n = self.joins.entry(step.actor.clone()).or_insert(0);
                let a = self.actors.get_mut(&step.actor).expect("declared actor");
                *a = ActorState {
                    connected: true,
                    conn: *n,
                    ..Default::default()
                };
                *n += 1;
                let frame = self.frame(
                    &step.actor,
                    now,
                    Message::Hello(Hello {
                        role,
                        name: step.actor.clone(),
                        subscribe_views: None,
                    }),
                );
                Plan::Connect { frame }
            }
            Action::ViewUpdate {
                center,
                zoom,
                orientation_deg,
            } => {
                let (w, h) = self.actors[&step.actor]
                    .view
                    .map_or(DEFAULT_SCREEN, |v| (v.screen_w, v.screen_h));
                let c = GeoPoint {
                    lat: center[0],
                    lon: center[1],
                };
                match ViewState::new(c, *zoom, *orientation_deg, w, h) {
                    Ok(v) => {
                        self.actors.get_mut(&step.actor).expect("actor").view = Some(v);
                        Plan::Send {
                            frame: self.frame(&step.actor, now, Message::ViewUpdate(v)),
                        }
                    }
                    Err(e) => Plan::Skip {
                        reason: format!("invalid view: {e}"),
                    },
                }
            }
            Action::Query { dialect, text, spawn } => Plan::Send {
                frame: self.frame(
                    &step.actor,
                    now,
                    Message::QuerySubmit(QuerySubmit {
                        dialect: *dialect,
                        text: substitute(text, &ids),
                        spawn: *spawn,
                    }),
                ),
            },
            Action::Interaction { kind, target, data } => Plan::Send {
                frame: self.frame(
                    &step.actor,
                    now,
                    Message::Interaction(Interaction {
                        kind: *kind,
                        target: target.as_ref().map(|t| substitute(t, &ids)),
                        data: data.clone(),
                    }),
                ),
            },
            Action::Disconnect => {
                let a = self.actors.get_mut(&step.actor).expect("actor");
                a.connected = false;
                a.client_id = None;
                Plan::Close
            }
            Action::Wait { ms } => Plan::Sleep { ms: *ms },
        }
    }

    /// Tracks ids and views from frames an actor receives.
    pub fn observe(&mut self, actor: &str, env: &Envelope) {
        let Some(a) = self.actors.get_mut(actor) else {
            return;
        };
        match &env.body {
            Message::Welcome(w) => {
                a.client_id = Some(w.client_id.clone());
                a.view = Some(w.view);
            }
            Message::ViewUpdate(v) => a.view = Some(*v),
            _ => {}
        }
    }
}

/// Result of an in-process run.
pub struct InProcessRun {
    pub traces: Vec<TraceLine>,
    pub dump: SessionDump,
    pub session: Session,
    /// Every frame delivered, per connection, in order (the wire tap).
    pub wire: BTreeMap<ConnId, Vec<Envelope>>,
    pub skipped: Vec<String>,
}

/// Runs `scenario` directly against `session`. Step times become the
/// session clock; connection ids are assigned per join.
pub fn run_in_process(scenario: &Scenario, mut session: Session) -> InProcessRun {
    let mut driver = Driver::new(scenario);
    let mut traces = Vec::new();
    let mut wire: BTreeMap<ConnId, Vec<Envelope>> = BTreeMap::new();
    let mut conn_of: BTreeMap<String, ConnId> = BTreeMap::new();
    let mut actor_of: BTreeMap<ConnId, (String, u32)> = BTreeMap::new();
    let mut next_conn: ConnId = 1;
    let mut skipped = Vec::new();
    let mut clock = 0;
    for step in &scenario.actions {
        clock = clock.max(step.at_ms);
        let plan = driver.plan(scenario, step, clock);
        let mut inputs = Vec::new();
        match plan {
            Plan::Connect { frame } => {
                let conn = next_conn;
                next_conn += 1;
                conn_of.insert(step.actor.clone(), conn);
                actor_of.insert(conn, (step.actor.clone(), driver.actors[&step.actor].conn));
                inputs.push(Input::Connect { conn });
                inputs.push(Input::Frame { conn, text: frame });
            }
            Plan::Send { frame } => {
                let conn = conn_of[&step.actor];
                inputs.push(Input::Frame { conn, text: frame });
            }
            Plan::Close => {
                let conn = conn_of.remove(&step.actor).expect("connected actor");
                inputs.push(Input::Disconnect { conn });
            }
            Plan::Sleep { ms } => clock += ms,
            Plan::Skip { reason } => skipped.push(format!("{} {}: {reason}", step.actor, step.action.name())),
        }
        for input in inputs {
            if let Input::Frame { conn, text } = &input {
                let (actor, c) = actor_of[conn].clone();
                traces.push(TraceLine {
                    actor,
                    conn: c,
                    dir: Dir::Send,
                    at_ms: clock,
                    frame: text.clone(),
                });
            }
            let outs = session.apply(input, clock);
            deliver(outs, &mut driver, &mut traces, &mut wire, &actor_of, &mut conn_of, clock);
        }
    }
    let dump = session.dump();
    InProcessRun {
        traces,
        dump,
        session,
        wire,
        skipped,
    }
}

fn deliver(
    outs: Vec<Outbound>,
    driver: &mut Driver,
    traces: &mut Vec<TraceLine>,
    wire: &mut BTreeMap<ConnId, Vec<Envelope>>,
    actor_of: &BTreeMap<ConnId, (String, u32)>,
    conn_of: &mut BTreeMap<String, ConnId>,
    clock: u64,
) {
    for o in outs {
        match o {
            Outbound::Send { conn, env } => {
                wire.entry(conn).or_default().push(env.clone());
                let Some((actor, c)) = actor_of.get(&conn) else {
                    continue;
                };
                // Frames for a connection the actor already closed are lost.
                if conn_of.get(actor) != Some(&conn) {
                    continue;
                }
                driver.observe(actor, &env);
                traces.push(TraceLine {
                    actor: actor.clone(),
                    conn: *c,
                    dir: Dir::Recv,
                    at_ms: clock,
                    frame: encode(&env),
                });
            }
            Outbound::Close { conn, .. } => {
                if let Some((actor, _)) = actor_of.get(&conn) {
                    if conn_of.get(actor) == Some(&conn) {
                        conn_of.remove(actor);
                        if let Some(a) = driver.actors.get_mut(actor) {
                            a.connected = false;
                            a.client_id = None;
                        }
                    }
                }
            }
        }
    }
}
