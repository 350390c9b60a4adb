//! Offline consistency check over recorded client traces and a server dump.
//!
//! Each actor connection ("segment") is folded into a [`Replica`]; the
//! checker then verifies convergence against the dump, privacy of every
//! received frame, per-sender ordering, per-object version monotonicity,
//! and that each requester's markers match its latest spawning result.
//! A frame that leaks a PRIVATE object is reported once and otherwise
//! ignored, so one planted fault yields one finding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::{decode, ArObject, Message, ObjectKind};
use crate::replica::{Placement, Replica};
use crate::session::SessionDump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dir {
    Send,
    Recv,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub actor: String,
    /// Connection index of this actor; bumps on every re-join.
    pub conn: u32,
    pub dir: Dir,
    pub at_ms: u64,
    pub frame: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    Undecodable { actor: String, conn: u32, line: usize, error: String },
    PrivacyLeak { actor: String, conn: u32, client: Option<String>, owner: String, line: usize },
    OrderViolation { actor: String, conn: u32, sender: String, prev: u64, seq: u64 },
    VersionRegression { actor: String, conn: u32, object_id: String, prev: u64, version: u64 },
    Divergence { actor: String, client: String, object_id: String, replica: Option<String>, server: Option<String> },
    ResultLayer { client: String, expected: Vec<String>, actual: Vec<String> },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Undecodable { actor, conn, line, error } => write!(f, "{actor}#{conn} line {line}: undecodable frame: {error}"),
            Finding::PrivacyLeak { actor, conn, client, owner, line } => write!(
                f,
                "{actor}#{conn} line {line}: PRIVATE object of {owner} delivered to {}",
                client.as_deref().unwrap_or("<unjoined>")
            ),
            Finding::OrderViolation { actor, conn, sender, prev, seq } => {
                write!(f, "{actor}#{conn}: frames from {sender} out of order ({prev} then {seq})")
            }
            Finding::VersionRegression { actor, conn, object_id, prev, version } => {
                write!(f, "{actor}#{conn}: {object_id} version {version} after {prev}")
            }
            Finding::Divergence { actor, client, object_id, replica, server } => write!(
                f,
                "{actor} ({client}) diverges at {object_id}: replica {} vs server {}",
                replica.as_deref().unwrap_or("<absent>"),
                server.as_deref().unwrap_or("<absent>")
            ),
            Finding::ResultLayer { client, expected, actual } => {
                write!(f, "{client}: markers {actual:?} but latest result {expected:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub findings: Vec<Finding>,
    pub segments: usize,
    pub frames: usize,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Reads every `*.jsonl` file in `dir` (or `dir` itself if it is a file).
pub fn load_traces(dir: &Path) -> std::io::Result<Vec<TraceLine>> {
    let mut files = Vec::new();
    if dir.is_file() {
        files.push(dir.to_path_buf());
    } else {
        for e in std::fs::read_dir(dir)? {
            let p = e?.path();
            if p.extension().is_some_and(|x| x == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    }
    let mut out = Vec::new();
    for f in files {
        let r = std::io::BufReader::new(std::fs::File::open(&f)?);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: TraceLine = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", f.display(), i + 1))
            })?;
            out.push(t);
        }
    }
    Ok(out)
}

fn canonical(o: &ArObject) -> String {
    serde_json::to_string(o).expect("object serializes")
}

struct Segment {
    actor: String,
    conn: u32,
    replica: Replica,
    last_seq: BTreeMap<String, u64>,
    versions: BTreeMap<String, u64>,
    spawn_flags: BTreeMap<u64, bool>,
    layer: Option<BTreeSet<String>>,
}

/// `placements` supplies per-actor calibration; actors without an entry
/// use the default placement (it does not affect any finding).
pub fn check_consistency(traces: &[TraceLine], dump: &SessionDump, placements: &BTreeMap<String, Placement>) -> Report {
    let mut report = Report::default();
    let mut segs: BTreeMap<(String, u32), Segment> = BTreeMap::new();
    for (line, t) in traces.iter().enumerate() {
        report.frames += 1;
        let seg = segs.entry((t.actor.clone(), t.conn)).or_insert_with(|| Segment {
            actor: t.actor.clone(),
            conn: t.conn,
            replica: Replica::new(placements.get(&t.actor).copied().unwrap_or_default()),
            last_seq: BTreeMap::new(),
            versions: BTreeMap::new(),
            spawn_flags: BTreeMap::new(),
            layer: None,
        });
        let env = match decode(t.frame.as_bytes()) {
            Ok(e) => e,
            Err(e) => {
                report.findings.push(Finding::Undecodable {
                    actor: t.actor.clone(),
                    conn: t.conn,
                    line,
                    error: e.to_string(),
                });
                continue;
            }
        };
        if t.dir == Dir::Send {
            if let Message::QuerySubmit(q) = &env.body {
                seg.spawn_flags.insert(env.seq, q.spawn.unwrap_or(true));
            }
            continue;
        }
        let client = match &env.body {
            Message::Welcome(w) => Some(w.client_id.clone()),
            _ => seg.replica.client_id.clone(),
        };
        if let Some(owner) = env
            .body
            .private_owners()
            .into_iter()
            .find(|o| Some(*o) != client.as_deref())
        {
            report.findings.push(Finding::PrivacyLeak {
                actor: t.actor.clone(),
                conn: t.conn,
                client,
                owner: owner.to_string(),
                line,
            });
            continue;
        }
        let prev = seg.last_seq.get(&env.sender).copied().unwrap_or(0);
        if env.seq <= prev {
            report.findings.push(Finding::OrderViolation {
                actor: t.actor.clone(),
                conn: t.conn,
                sender: env.sender.clone(),
                prev,
                seq: env.seq,
            });
        }
        seg.last_seq.insert(env.sender.clone(), env.seq.max(prev));
        let versioned: Vec<(String, u64)> = match &env.body {
            Message::ObjectSpawn(o) => vec![(o.object_id.clone(), o.version)],
            Message::ObjectUpdate(u) => vec![(u.object_id.clone(), u.version)],
            Message::Welcome(w) => w.snapshot.iter().map(|o| (o.object_id.clone(), o.version)).collect(),
            _ => Vec::new(),
        };
        for (id, v) in versioned {
            let prev = seg.versions.get(&id).copied().unwrap_or(0);
            if v <= prev {
                report.findings.push(Finding::VersionRegression {
                    actor: t.actor.clone(),
                    conn: t.conn,
                    object_id: id.clone(),
                    prev,
                    version: v,
                });
            }
            seg.versions.insert(id, v.max(prev));
        }
        if let Message::QueryResult(r) = &env.body {
            if seg.spawn_flags.get(&r.request_id).copied().unwrap_or(true) {
                seg.layer = Some(r.records.iter().map(|x| x.id.clone()).collect());
            }
        }
        seg.replica.apply(&env);
    }
    report.segments = segs.len();

    let connected: BTreeSet<&str> = dump.clients.iter().map(|c| c.client_id.as_str()).collect();
    for seg in segs.values() {
        let Some(client) = seg.replica.client_id.as_deref() else {
            continue;
        };
        // Only the last connection of an actor can still be live.
        let latest = segs
            .keys()
            .filter(|(a, _)| *a == seg.actor)
            .map(|(_, c)| *c)
            .max()
            == Some(seg.conn);
        if latest && connected.contains(client) {
            let server: BTreeMap<&str, String> = dump
                .objects
                .iter()
                .filter(|o| o.scope.visible_to(client))
                .map(|o| (o.object_id.as_str(), canonical(o)))
                .collect();
            let mine: BTreeMap<&str, String> = seg
                .replica
                .objects
                .values()
                .map(|o| (o.object_id.as_str(), canonical(o)))
                .collect();
            let ids: BTreeSet<&str> = server.keys().chain(mine.keys()).copied().collect();
            if let Some(id) = ids.into_iter().find(|id| server.get(id) != mine.get(id)) {
                report.findings.push(Finding::Divergence {
                    actor: seg.actor.clone(),
                    client: client.to_string(),
                    object_id: id.to_string(),
                    replica: mine.get(id).cloned(),
                    server: server.get(id).cloned(),
                });
            }
        }
        let expected: Vec<String> = seg.layer.clone().unwrap_or_default().into_iter().collect();
        let actual: Vec<String> = dump
            .objects
            .iter()
            .filter(|o| o.kind == ObjectKind::VesselMarker)
            .filter(|o| o.attrs.get("requester").and_then(|v| v.as_str()) == Some(client))
            .filter_map(|o| o.attrs.get("record_id").and_then(|v| v.as_str()).map(str::to_string))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if expected != actual {
            report.findings.push(Finding::ResultLayer {
                client: client.to_string(),
                expected,
                actual,
            });
        }
    }
    report
}
