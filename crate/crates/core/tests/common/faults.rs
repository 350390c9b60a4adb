//! Segment replay and fault planting over recorded traces.

use std::collections::{BTreeMap, BTreeSet};

use surface_sync_core::checker::{Dir, TraceLine};
use surface_sync_core::protocol::*;
use surface_sync_core::replica::{Placement, Replica};
use surface_sync_core::session::SessionDump;

pub fn decode_line(t: &TraceLine) -> Envelope {
    decode(t.frame.as_bytes()).expect("recorded frames decode")
}

/// Latest connection index of each actor still in the room at the end.
pub fn live_segments(traces: &[TraceLine], dump: &SessionDump) -> BTreeMap<String, u32> {
    let live: BTreeSet<&str> = dump.clients.iter().map(|c| c.client_id.as_str()).collect();
    let mut latest: BTreeMap<String, (u32, Option<String>)> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.dir == Dir::Recv) {
        let e = latest.entry(t.actor.clone()).or_insert((t.conn, None));
        if t.conn > e.0 {
            *e = (t.conn, None);
        }
        if let Message::Welcome(w) = decode_line(t).body {
            if t.conn == e.0 {
                e.1 = Some(w.client_id);
            }
        }
    }
    latest
        .into_iter()
        .filter(|(_, (_, id))| id.as_deref().is_some_and(|id| live.contains(id)))
        .map(|(a, (c, _))| (a, c))
        .collect()
}

pub fn replay_segment(traces: &[TraceLine], actor: &str, conn: u32, placement: Placement) -> Replica {
    let mut rep = Replica::new(placement);
    for t in traces.iter().filter(|t| t.dir == Dir::Recv && t.actor == actor && t.conn == conn) {
        rep.apply(&decode_line(t));
    }
    rep
}

/// Inserts a foreign PRIVATE spawn after the last frame of a live AR
/// client. Returns the traces, the victim and the planted line index.
pub fn plant_privacy_leak(traces: &[TraceLine], dump: &SessionDump) -> Option<(Vec<TraceLine>, String, usize)> {
    let live = live_segments(traces, dump);
    let (victim, conn) = live.iter().find(|(a, _)| a.starts_with("ar"))?;
    let at = traces.iter().rposition(|t| &t.actor == victim && t.conn == *conn && t.dir == Dir::Recv)?;
    let leak = ArObject {
        object_id: "menu/c999".into(),
        kind: ObjectKind::Menu,
        geo: None,
        screen_px: Some([10.0, 10.0]),
        altitude_m: 0.0,
        scope: Scope::Private { owner: "c999".into() },
        version: 1,
        attrs: BTreeMap::new(),
    };
    let env = Envelope::new(&dump.session, "server", 999_999, 0, Message::ObjectSpawn(leak));
    let mut out = traces.to_vec();
    out.insert(at + 1, TraceLine { actor: victim.clone(), conn: *conn, dir: Dir::Recv, at_ms: 0, frame: encode(&env) });
    Some((out, victim.clone(), at + 1))
}

/// Removes the last spawn of a still-live object from a live connection.
/// Returns the traces, the actor and the object id.
pub fn plant_dropped_spawn(traces: &[TraceLine], dump: &SessionDump) -> Option<(Vec<TraceLine>, String, String)> {
    let alive: BTreeSet<&str> = dump.objects.iter().map(|o| o.object_id.as_str()).collect();
    let live = live_segments(traces, dump);
    let (i, id) = traces.iter().enumerate().rev().find_map(|(i, t)| {
        if t.dir != Dir::Recv || live.get(&t.actor) != Some(&t.conn) {
            return None;
        }
        match decode_line(t).body {
            Message::ObjectSpawn(o) if alive.contains(o.object_id.as_str()) => Some((i, o.object_id)),
            _ => None,
        }
    })?;
    let mut out = traces.to_vec();
    let dropped = out.remove(i);
    Some((out, dropped.actor, id))
}

/// Duplicates the last VIEW_UPDATE `actor` received.
pub fn plant_replayed_view(traces: &[TraceLine], actor: &str) -> Option<Vec<TraceLine>> {
    let i = traces
        .iter()
        .rposition(|t| t.dir == Dir::Recv && t.actor == actor && decode_line(t).type_tag() == "VIEW_UPDATE")?;
    let mut out = traces.to_vec();
    out.insert(i + 1, out[i].clone());
    Some(out)
}
