//! TUIO 1.1 input from the shared display: OSC decoding, alive-set
//! tracking and a small pan / pinch / tangible gesture recognizer.

pub mod osc;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geo::{screen_to_geo, GeoBounds, GeoPoint, ViewState, MAX_MERCATOR_LAT};
use osc::{OscArg, OscMessage};

pub const DEFAULT_TUIO_PORT: u16 = 3333;
pub const DEFAULT_REGION_SIDE_DEG: f64 = 2.0;
/// Both cursors must travel further than this before a pinch engages.
pub const PINCH_THRESHOLD_PX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TuioError {
    #[error("not an OSC bundle")]
    NotOscBundle,
    #[error("unknown TUIO profile {0:?}")]
    UnknownProfile(String),
    #[error("malformed packet at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Profile {
    Cur2D,
    Obj2D,
}

impl Profile {
    pub fn address(&self) -> &'static str {
        match self {
            Profile::Cur2D => "/tuio/2Dcur",
            Profile::Obj2D => "/tuio/2Dobj",
        }
    }
}

/// Extra fields of a 2Dobj `set`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjFields {
    pub class_id: i32,
    pub angle: f32,
    pub rot_vel: f32,
    pub rot_accel: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetEvent {
    pub session_id: i32,
    pub x: f32,
    pub y: f32,
    pub vx: f32,
    pub vy: f32,
    pub accel: f32,
    pub obj: Option<ObjFields>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuioFrame {
    pub profile: Profile,
    pub source: Option<String>,
    pub alive: Vec<i32>,
    pub set_events: Vec<SetEvent>,
    /// -1 marks an out-of-band frame.
    pub fseq: i32,
}

fn malformed(offset: usize, reason: impl Into<String>) -> TuioError {
    TuioError::Malformed {
        offset,
        reason: reason.into(),
    }
}

fn int(m: &OscMessage, i: usize) -> Result<i32, TuioError> {
    match m.args.get(i) {
        Some(OscArg::Int(v)) => Ok(*v),
        _ => Err(malformed(m.offset, format!("argument {i} must be an int"))),
    }
}

fn float(m: &OscMessage, i: usize) -> Result<f32, TuioError> {
    match m.args.get(i) {
        Some(OscArg::Float(v)) if v.is_finite() => Ok(*v),
        _ => Err(malformed(m.offset, format!("argument {i} must be a finite float"))),
    }
}

fn unit(m: &OscMessage, i: usize) -> Result<f32, TuioError> {
    let v = float(m, i)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(malformed(m.offset, format!("coordinate {v} outside [0, 1]")))
    }
}

/// Decodes one TUIO bundle. The bundle must carry exactly one profile and
/// both an `alive` and an `fseq` message.
pub fn decode_osc(packet: &[u8]) -> Result<TuioFrame, TuioError> {
    let msgs = osc::read_bundle(packet)?;
    let mut profile = None;
    let mut source = None;
    let mut alive: Option<(usize, Vec<i32>)> = None;
    let mut sets = Vec::new();
    let mut fseq = None;
    for m in &msgs {
        let p = match m.address.as_str() {
            "/tuio/2Dcur" => Profile::Cur2D,
            "/tuio/2Dobj" => Profile::Obj2D,
            other => return Err(TuioError::UnknownProfile(other.to_string())),
        };
        if *profile.get_or_insert(p) != p {
            return Err(malformed(m.offset, "mixed TUIO profiles in one bundle"));
        }
        let cmd = match m.args.first() {
            Some(OscArg::Str(s)) => s.as_str(),
            _ => return Err(malformed(m.offset, "missing TUIO command")),
        };
        match cmd {
            "source" => match m.args.get(1) {
                Some(OscArg::Str(s)) if m.args.len() == 2 => source = Some(s.clone()),
                _ => return Err(malformed(m.offset, "source takes one string")),
            },
            "alive" => {
                if alive.is_some() {
                    return Err(malformed(m.offset, "duplicate alive message"));
                }
                let ids = (1..m.args.len())
                    .map(|i| int(m, i))
                    .collect::<Result<Vec<_>, _>>()?;
                alive = Some((m.offset, ids));
            }
            "set" => {
                let want = match p {
                    Profile::Cur2D => 7,
                    Profile::Obj2D => 11,
                };
                if m.args.len() != want {
                    return Err(malformed(m.offset, format!("set takes {} arguments", want - 1)));
                }
                let ev = match p {
                    Profile::Cur2D => SetEvent {
                        session_id: int(m, 1)?,
                        x: unit(m, 2)?,
                        y: unit(m, 3)?,
                        vx: float(m, 4)?,
                        vy: float(m, 5)?,
                        accel: float(m, 6)?,
                        obj: None,
                    },
                    Profile::Obj2D => SetEvent {
                        session_id: int(m, 1)?,
                        x: unit(m, 3)?,
                        y: unit(m, 4)?,
                        vx: float(m, 6)?,
                        vy: float(m, 7)?,
                        accel: float(m, 9)?,
                        obj: Some(ObjFields {
                            class_id: int(m, 2)?,
                            angle: float(m, 5)?,
                            rot_vel: float(m, 8)?,
                            rot_accel: float(m, 10)?,
                        }),
                    },
                };
                sets.push((m.offset, ev));
            }
            "fseq" => {
                if fseq.is_some() || m.args.len() != 2 {
                    return Err(malformed(m.offset, "fseq takes one int, once"));
                }
                fseq = Some(int(m, 1)?);
            }
            other => return Err(malformed(m.offset, format!("unknown TUIO command {other:?}"))),
        }
    }
    let Some(profile) = profile else {
        return Err(malformed(16, "empty bundle"));
    };
    let Some((_, alive)) = alive else {
        return Err(malformed(16, "bundle without alive message"));
    };
    let Some(fseq) = fseq else {
        return Err(malformed(16, "bundle without fseq message"));
    };
    let alive_set: BTreeSet<i32> = alive.iter().copied().collect();
    if alive_set.len() != alive.len() {
        return Err(malformed(16, "duplicate session id in alive"));
    }
    for (offset, ev) in &sets {
        if !alive_set.contains(&ev.session_id) {
            return Err(malformed(*offset, format!("set for session {} not in alive", ev.session_id)));
        }
    }
    Ok(TuioFrame {
        profile,
        source,
        alive,
        set_events: sets.into_iter().map(|(_, e)| e).collect(),
        fseq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Added,
    Moved,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchPointState {
    pub session_id: i32,
    pub phase: Phase,
    pub pos_px: [f64; 2],
    /// Fiducial class for tangibles.
    pub class_id: Option<i32>,
}

/// Alive-set differ for one profile.
///
/// A point is ADDED at its first `set` (its position is unknown before
/// that), MOVED on each later `set`, and REMOVED when it leaves `alive`.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    last_fseq: Option<i32>,
    live: BTreeMap<i32, [f64; 2]>,
    dropped: u64,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frames dropped for a stale or repeated `fseq`.
    pub fn dropped_frames(&self) -> u64 {
        self.dropped
    }

    pub fn live(&self) -> &BTreeMap<i32, [f64; 2]> {
        &self.live
    }

    pub fn track(&mut self, frame: &TuioFrame, screen_w: u32, screen_h: u32) -> Vec<TouchPointState> {
        if frame.fseq != -1 {
            if matches!(self.last_fseq, Some(last) if frame.fseq <= last) {
                self.dropped += 1;
                return Vec::new();
            }
            self.last_fseq = Some(frame.fseq);
        }
        let alive: BTreeSet<i32> = frame.alive.iter().copied().collect();
        let mut out = Vec::new();
        let gone: Vec<i32> = self.live.keys().filter(|id| !alive.contains(id)).copied().collect();
        for id in gone {
            let pos_px = self.live.remove(&id).expect("live id");
            out.push(TouchPointState {
                session_id: id,
                phase: Phase::Removed,
                pos_px,
                class_id: None,
            });
        }
        for ev in &frame.set_events {
            let pos_px = [ev.x as f64 * screen_w as f64, ev.y as f64 * screen_h as f64];
            let phase = if self.live.insert(ev.session_id, pos_px).is_some() {
                Phase::Moved
            } else {
                Phase::Added
            };
            out.push(TouchPointState {
                session_id: ev.session_id,
                phase,
                pos_px,
                class_id: ev.obj.map(|o| o.class_id),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GestureOutput {
    View(ViewState),
    SelectRegion { region: GeoBounds, at_px: [f64; 2] },
}

#[derive(Debug, Clone)]
struct Pinch {
    ids: [i32; 2],
    start: [[f64; 2]; 2],
    /// Separation the last applied zoom step was measured against.
    ref_dist: f64,
    engaged: bool,
}

/// Turns touch events into view changes and region selections.
#[derive(Debug, Clone)]
pub struct GestureRecognizer {
    pub region_side_deg: f64,
    cursors: BTreeMap<i32, [f64; 2]>,
    pinch: Option<Pinch>,
}

impl Default for GestureRecognizer {
    fn default() -> Self {
        Self::new(DEFAULT_REGION_SIDE_DEG)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl GestureRecognizer {
    pub fn new(region_side_deg: f64) -> Self {
        Self {
            region_side_deg,
            cursors: BTreeMap::new(),
            pinch: None,
        }
    }

    /// Cursor events of one frame. Returns at most one view change.
    pub fn cursors(&mut self, events: &[TouchPointState], view: &ViewState) -> Vec<GestureOutput> {
        if events.is_empty() {
            return Vec::new();
        }
        let before = self.cursors.clone();
        for e in events {
            match e.phase {
                Phase::Removed => {
                    self.cursors.remove(&e.session_id);
                }
                _ => {
                    self.cursors.insert(e.session_id, e.pos_px);
                }
            }
        }
        let membership_changed = before.keys().ne(self.cursors.keys());
        let mut next = *view;
        match self.cursors.len() {
            1 => {
                self.pinch = None;
                let (id, pos) = self.cursors.iter().next().expect("one cursor");
                if let Some(prev) = before.get(id) {
                    let d = [pos[0] - prev[0], pos[1] - prev[1]];
                    if d != [0.0, 0.0] {
                        if let Ok(v) = next.panned_by(d) {
                            next = v;
                        }
                    }
                }
            }
            2 => {
                let ids: Vec<i32> = self.cursors.keys().copied().collect();
                let pa = self.cursors[&ids[0]];
                let pb = self.cursors[&ids[1]];
                if membership_changed || self.pinch.is_none() {
                    self.pinch = Some(Pinch {
                        ids: [ids[0], ids[1]],
                        start: [pa, pb],
                        ref_dist: dist(pa, pb),
                        engaged: false,
                    });
                }
                let p = self.pinch.as_mut().expect("pinch state");
                if !p.engaged {
                    p.engaged = dist(pa, p.start[0]) > PINCH_THRESHOLD_PX
                        && dist(pb, p.start[1]) > PINCH_THRESHOLD_PX;
                }
                let d = dist(pa, pb);
                if p.engaged && p.ref_dist > 0.0 && d > 0.0 && d != p.ref_dist {
                    let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                    if let Ok(v) = next.zoomed_about((d / p.ref_dist).log2(), mid) {
                        next = v;
                        p.ref_dist = d;
                    }
                }
                debug_assert_eq!(p.ids, [ids[0], ids[1]]);
            }
            _ => self.pinch = None,
        }
        if next != *view {
            vec![GestureOutput::View(next)]
        } else {
            Vec::new()
        }
    }

    /// Tangible events: each newly placed object selects a square region
    /// centered under it.
    pub fn tangibles(&self, events: &[TouchPointState], view: &ViewState) -> Vec<GestureOutput> {
        events
            .iter()
            .filter(|e| e.phase == Phase::Added)
            .filter_map(|e| {
                let c = screen_to_geo(view, e.pos_px).ok()?;
                Some(GestureOutput::SelectRegion {
                    region: self.region_around(c),
                    at_px: e.pos_px,
                })
            })
            .collect()
    }

    /// Square of `region_side_deg` centered on `c`, clipped to the
    /// Mercator band and to [-180, 180].
    pub fn region_around(&self, c: GeoPoint) -> GeoBounds {
        let h = self.region_side_deg / 2.0;
        let lon = crate::geo::wrap_lon(c.lon);
        GeoBounds {
            north_west: GeoPoint {
                lat: (c.lat + h).min(MAX_MERCATOR_LAT),
                lon: (lon - h).max(-180.0),
            },
            south_east: GeoPoint {
                lat: (c.lat - h).max(-MAX_MERCATOR_LAT),
                lon: (lon + h).min(180.0),
            },
        }
    }
}

/// Both profiles plus the recognizer, as the server runs them.
#[derive(Debug, Clone, Default)]
pub struct TuioBridge {
    pub cur: Tracker,
    pub obj: Tracker,
    pub gestures: GestureRecognizer,
}

impl TuioBridge {
    pub fn new(region_side_deg: f64) -> Self {
        Self {
            cur: Tracker::new(),
            obj: Tracker::new(),
            gestures: GestureRecognizer::new(region_side_deg),
        }
    }

    pub fn handle(&mut self, frame: &TuioFrame, view: &ViewState) -> Vec<GestureOutput> {
        match frame.profile {
            Profile::Cur2D => {
                let ev = self.cur.track(frame, view.screen_w, view.screen_h);
                self.gestures.cursors(&ev, view)
            }
            Profile::Obj2D => {
                let ev = self.obj.track(frame, view.screen_w, view.screen_h);
                self.gestures.tangibles(&ev, view)
            }
        }
    }
}
