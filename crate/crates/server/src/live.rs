//! Runs a scenario against a live server over websockets.
//!
//! After every step the runner issues a PING barrier: first on the acting
//! connection (so the server has processed the step), then on every other
//! connection in name order (so all frames the step caused have arrived).
//! Each connection's frames are recorded as one block. Because the server
//! applies inputs in one total order and each connection's queue is FIFO,
//! the recorded trace is the same on every run up to timestamps.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use futures::{SinkExt, StreamExt};
use surface_sync_core::checker::{Dir, TraceLine};
use surface_sync_core::protocol::{decode, Message};
use surface_sync_core::scenario::Scenario;
use surface_sync_core::session::SessionDump;
use surface_sync_core::sim::{Driver, Plan};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::Message as WsMessage;

use crate::server::SUBPROTOCOL;

const BARRIER_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("{actor}: connection lost at {at_ms} ms")]
    ConnectionLost { actor: String, at_ms: u64 },
    #[error("{actor}: no reply within {timeout:?} at {at_ms} ms")]
    Timeout { actor: String, at_ms: u64, timeout: Duration },
}

pub struct LiveRun {
    pub traces: Vec<TraceLine>,
    pub dump: SessionDump,
    pub skipped: Vec<String>,
}

struct Inbound {
    actor: String,
    conn: u32,
    /// `None` once the socket has ended.
    text: Option<String>,
}

struct Link {
    conn: u32,
    tx: mpsc::UnboundedSender<WsMessage>,
}

struct Runner {
    addr: String,
    driver: Driver,
    links: BTreeMap<String, Link>,
    inbound_tx: mpsc::UnboundedSender<Inbound>,
    inbound: mpsc::UnboundedReceiver<Inbound>,
    /// Frames received for other actors while one actor's barrier was
    /// pending; recorded only after those actors' own barrier PINGs.
    held: VecDeque<Inbound>,
    traces: Vec<TraceLine>,
    started: Instant,
}

/// `addr` is the server's HTTP `host:port`.
pub async fn run_live(scenario: &Scenario, addr: &str) -> anyhow::Result<LiveRun> {
    let (inbound_tx, inbound) = mpsc::unbounded_channel();
    let mut r = Runner {
        addr: addr.to_string(),
        driver: Driver::new(scenario),
        links: BTreeMap::new(),
        inbound_tx,
        inbound,
        held: VecDeque::new(),
        traces: Vec::new(),
        started: Instant::now(),
    };
    let mut skipped = Vec::new();
    for step in &scenario.actions {
        // Scenario time is a schedule, not a wall clock: steps run back to
        // back and only `wait` sleeps.
        let now = r.now();
        let departing = r.driver.actors[&step.actor].client_id.clone();
        match r.driver.plan(scenario, step, now) {
            Plan::Connect { frame } => {
                r.connect(&step.actor).await?;
                r.send(&step.actor, frame)?;
                r.barrier(&step.actor).await?;
            }
            Plan::Send { frame } => {
                r.send(&step.actor, frame)?;
                r.barrier(&step.actor).await?;
            }
            Plan::Close => {
                let link = r.links.remove(&step.actor).expect("connected actor has a link");
                let _ = link.tx.send(WsMessage::Close(None));
                if let Some(id) = departing {
                    r.await_departure(&id).await?;
                }
                r.barrier_all().await?;
            }
            Plan::Sleep { ms } => r.pump_until(Instant::now() + Duration::from_millis(ms), false).await?,
            Plan::Skip { reason } => skipped.push(format!("{} {}: {reason}", step.actor, step.action.name())),
        }
    }
    r.barrier_all().await?;
    let dump = r.fetch_dump().await?;
    for link in r.links.values() {
        let _ = link.tx.send(WsMessage::Close(None));
    }
    Ok(LiveRun {
        traces: r.traces,
        dump,
        skipped,
    })
}

impl Runner {
    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    async fn connect(&mut self, actor: &str) -> anyhow::Result<()> {
        let mut req = format!("ws://{}/ws", self.addr).into_client_request()?;
        req.headers_mut().insert("Sec-WebSocket-Protocol", SUBPROTOCOL.parse()?);
        let (ws, _) = tokio_tungstenite::connect_async(req).await.with_context(|| format!("{actor}: connecting to {}", self.addr))?;
        let (mut sink, mut stream) = ws.split();
        let (tx, mut rx) = mpsc::unbounded_channel::<WsMessage>();
        tokio::spawn(async move {
            while let Some(m) = rx.recv().await {
                let closing = matches!(m, WsMessage::Close(_));
                if sink.send(m).await.is_err() || closing {
                    break;
                }
            }
        });
        let conn = self.driver.actors[actor].conn;
        let inbound = self.inbound_tx.clone();
        let name = actor.to_string();
        tokio::spawn(async move {
            while let Some(m) = stream.next().await {
                match m {
                    Ok(WsMessage::Text(t)) => {
                        let _ = inbound.send(Inbound { actor: name.clone(), conn, text: Some(t) });
                    }
                    Ok(WsMessage::Close(_)) | Err(_) => break,
                    Ok(_) => {}
                }
            }
            let _ = inbound.send(Inbound { actor: name, conn, text: None });
        });
        self.links.insert(actor.to_string(), Link { conn, tx });
        Ok(())
    }

    fn send(&mut self, actor: &str, frame: String) -> anyhow::Result<()> {
        let link = self.links.get(actor).ok_or_else(|| anyhow!("{actor} is not connected"))?;
        self.traces.push(TraceLine {
            actor: actor.to_string(),
            conn: link.conn,
            dir: Dir::Send,
            at_ms: self.now(),
            frame: frame.clone(),
        });
        link.tx.send(WsMessage::Text(frame)).map_err(|_| LiveError::ConnectionLost {
            actor: actor.to_string(),
            at_ms: self.now(),
        })?;
        Ok(())
    }

    /// Handles one inbound frame; returns the actor if it was a PONG.
    fn accept(&mut self, m: Inbound) -> anyhow::Result<Option<String>> {
        let current = self.links.get(&m.actor).is_some_and(|l| l.conn == m.conn);
        if !current {
            // Late frames on a socket the actor already closed.
            return Ok(None);
        }
        let Some(text) = m.text else {
            bail!(LiveError::ConnectionLost {
                actor: m.actor,
                at_ms: self.now(),
            });
        };
        self.traces.push(TraceLine {
            actor: m.actor.clone(),
            conn: m.conn,
            dir: Dir::Recv,
            at_ms: self.now(),
            frame: text.clone(),
        });
        let Ok(env) = decode(text.as_bytes()) else {
            return Ok(None);
        };
        self.driver.observe(&m.actor, &env);
        match env.body {
            Message::Ping => {
                let pong = self.driver.pong(&m.actor, self.now());
                self.send(&m.actor, pong)?;
                Ok(None)
            }
            Message::Pong => Ok(Some(m.actor)),
            _ => Ok(None),
        }
    }

    /// Pings `actor` and records its frames up to the PONG; frames for
    /// other actors are held back, so each actor's frames are recorded as
    /// one block regardless of how the sockets interleave.
    async fn sync(&mut self, actor: &str) -> anyhow::Result<()> {
        if !self.links.contains_key(actor) {
            return Ok(());
        }
        let frame = self.driver.ping(actor, self.now());
        self.send(actor, frame)?;
        let (mine, rest): (VecDeque<Inbound>, VecDeque<Inbound>) = self.held.drain(..).partition(|m| m.actor == actor);
        self.held = rest;
        for m in mine {
            if self.accept(m)?.is_some() {
                return Ok(());
            }
        }
        let deadline = tokio::time::Instant::now() + BARRIER_TIMEOUT;
        loop {
            let m = match tokio::time::timeout_at(deadline, self.inbound.recv()).await {
                Ok(Some(m)) => m,
                Ok(None) => unreachable!("runner holds a sender"),
                Err(_) => bail!(LiveError::Timeout {
                    actor: actor.to_string(),
                    at_ms: self.now(),
                    timeout: BARRIER_TIMEOUT,
                }),
            };
            if m.actor != actor {
                self.held.push_back(m);
            } else if self.accept(m)?.is_some() {
                return Ok(());
            }
        }
    }

    /// Syncs the acting actor first (so the server has processed its step),
    /// then everyone else in name order.
    async fn barrier(&mut self, actor: &str) -> anyhow::Result<()> {
        self.sync(actor).await?;
        self.barrier_except(Some(actor)).await
    }

    async fn barrier_all(&mut self) -> anyhow::Result<()> {
        self.barrier_except(None).await
    }

    async fn barrier_except(&mut self, skip: Option<&str>) -> anyhow::Result<()> {
        let others: Vec<String> = self.links.keys().filter(|a| Some(a.as_str()) != skip).cloned().collect();
        for a in &others {
            self.sync(a).await?;
        }
        // Only frames for departed sockets or unsolicited ones remain.
        while let Some(m) = self.held.pop_front() {
            self.accept(m)?;
        }
        Ok(())
    }

    async fn pump_until(&mut self, until: Instant, hold: bool) -> anyhow::Result<()> {
        loop {
            let left = until.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(());
            }
            match tokio::time::timeout(left, self.inbound.recv()).await {
                Ok(Some(m)) if hold => self.held.push_back(m),
                Ok(Some(m)) => {
                    self.accept(m)?;
                }
                Ok(None) | Err(_) => return Ok(()),
            }
        }
    }

    async fn fetch_dump(&self) -> anyhow::Result<SessionDump> {
        fetch_dump(&self.addr).await
    }

    /// Waits until the server has processed a closed connection.
    async fn await_departure(&mut self, client: &str) -> anyhow::Result<()> {
        let deadline = Instant::now() + BARRIER_TIMEOUT;
        loop {
            let dump = self.fetch_dump().await?;
            if !dump.clients.iter().any(|c| c.client_id == client) {
                return Ok(());
            }
            if Instant::now() > deadline {
                bail!(LiveError::Timeout {
                    actor: client.to_string(),
                    at_ms: self.now(),
                    timeout: BARRIER_TIMEOUT,
                });
            }
            self.pump_until(Instant::now() + Duration::from_millis(5), true).await?;
        }
    }
}

pub async fn fetch_dump(addr: &str) -> anyhow::Result<SessionDump> {
    let url = format!("http://{addr}/dump");
    tokio::task::spawn_blocking(move || -> anyhow::Result<SessionDump> {
        let body = ureq::get(&url).call().with_context(|| format!("GET {url}"))?.into_string()?;
        Ok(serde_json::from_str(&body)?)
    })
    .await?
}

/// Writes one `<actor>.jsonl` per actor into `dir`.
pub fn write_traces(dir: &Path, traces: &[TraceLine]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut by_actor: BTreeMap<&str, String> = BTreeMap::new();
    for t in traces {
        let s = by_actor.entry(&t.actor).or_default();
        s.push_str(&serde_json::to_string(t)?);
        s.push('\n');
    }
    for (actor, body) in by_actor {
        std::fs::write(dir.join(format!("{actor}.jsonl")), body)?;
    }
    Ok(())
}
