//! Scripted multi-client runs.
//!
//! A scenario is a versioned JSON document: declared actors plus a
//! time-ordered list of actions. String fields may reference another
//! actor's client id as `{name}`; the runner substitutes ids assigned
//! at join time.
//!
//! ```json
//! {"version":1,"session":"s1","actors":[{"name":"sd","role":"SHARED_DISPLAY"}],
//!  "actions":[{"at_ms":0,"actor":"sd","action":"join"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::Store;
use crate::geo::{GeoBounds, GeoPoint};
use crate::protocol::{ClientRole, InteractionData, InteractionKind};
use crate::query::{CompareOp, Dialect, Predicate, QueryAst, Value};
use crate::replica::Placement;
use crate::session::marker_id;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    pub role: ClientRole,
    #[serde(default)]
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Join,
    ViewUpdate {
        center: [f64; 2],
        zoom: f64,
        #[serde(default)]
        orientation_deg: f64,
    },
    Query {
        dialect: Dialect,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spawn: Option<bool>,
    },
    Interaction {
        kind: InteractionKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        #[serde(default)]
        data: InteractionData,
    },
    Disconnect,
    Wait {
        ms: u64,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Join => "join",
            Action::ViewUpdate { .. } => "view_update",
            Action::Query { .. } => "query",
            Action::Interaction { .. } => "interaction",
            Action::Disconnect => "disconnect",
            Action::Wait { .. } => "wait",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub at_ms: u64,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    #[serde(default = "default_session")]
    pub session: String,
    #[serde(default)]
    pub seed: u64,
    pub actors: Vec<Actor>,
    pub actions: Vec<Step>,
}

fn default_session() -> String {
    "s1".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("duplicate actor {0:?}")]
    DuplicateActor(String),
    #[error("step {step}: unknown actor {actor:?}")]
    UnknownActor { step: usize, actor: String },
    #[error("step {step}: time goes backwards")]
    TimeRegression { step: usize },
    #[error("invalid scenario JSON: {0}")]
    Json(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        let mut names = BTreeSet::new();
        for a in &self.actors {
            if !names.insert(a.name.as_str()) {
                return Err(ScenarioError::DuplicateActor(a.name.clone()));
            }
        }
        let mut t = 0;
        for (i, s) in self.actions.iter().enumerate() {
            if !names.contains(s.actor.as_str()) {
                return Err(ScenarioError::UnknownActor {
                    step: i,
                    actor: s.actor.clone(),
                });
            }
            if s.at_ms < t {
                return Err(ScenarioError::TimeRegression { step: i });
            }
            t = s.at_ms;
        }
        Ok(())
    }

    pub fn actor(&self, name: &str) -> Option<&Actor> {
        self.actors.iter().find(|a| a.name == name)
    }
}

/// Replaces `{name}` with the client id currently bound to `name`.
pub fn substitute(text: &str, ids: &BTreeMap<String, String>) -> String {
    let mut out = text.to_string();
    for (name, id) in ids {
        out = out.replace(&format!("{{{name}}}"), id);
    }
    out
}

/// Random mixed workload: one shared display, three AR clients and one
/// external device, with AR clients leaving and rejoining mid-stream.
/// Grab targets are drawn from markers the generator knows are live, so
/// most interactions succeed; some deliberately collide. Absent actors
/// rejoin at the end.
pub fn generate(seed: u64, events: usize, store: &Store) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actors = vec![
        actor("sd", ClientRole::SharedDisplay, 0.0),
        actor("ar1", ClientRole::ArClient, 0.0),
        actor("ar2", ClientRole::ArClient, 0.0),
        actor("ar3", ClientRole::ArClient, 90.0),
        actor("ext", ClientRole::ExternalDevice, 0.0),
    ];
    let mut steps = Vec::new();
    let mut t = 0u64;
    let push = |steps: &mut Vec<Step>, t: &mut u64, actor: &str, action: Action| {
        *t += 5;
        steps.push(Step {
            at_ms: *t,
            actor: actor.into(),
            action,
        });
    };
    let mut joined: BTreeMap<&str, bool> = BTreeMap::new();
    for a in ["sd", "ar1", "ar2", "ext"] {
        push(&mut steps, &mut t, a, Action::Join);
        joined.insert(a, true);
    }
    joined.insert("ar3", false);
    // Markers live per requester, keyed by the actor name used in targets.
    let mut layers: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let records: Vec<&crate::datastore::AssetRecord> = store.records().iter().collect();
    let mut count = 0;
    while count < events {
        let roll: u32 = rng.gen_range(0..100);
        let live: Vec<&str> = joined.iter().filter(|(_, j)| **j).map(|(n, _)| *n).collect();
        let absent: Vec<&str> = joined.iter().filter(|(_, j)| !**j).map(|(n, _)| *n).collect();
        match roll {
            0..=19 => {
                let center = [rng.gen_range(-40.0..40.0), rng.gen_range(-120.0..120.0)];
                let zoom = rng.gen_range(1.0..6.0_f64);
                let orientation_deg = [0.0, 0.0, 15.0, 90.0][rng.gen_range(0..4)];
                push(&mut steps, &mut t, "sd", Action::ViewUpdate { center, zoom, orientation_deg });
            }
            20..=39 => {
                let who = *live.choose(&mut rng).expect("sd is always live");
                let ast = random_query(&mut rng, &records);
                let ids: Vec<String> = store.evaluate(&ast).map(|r| r.ids().iter().map(|s| s.to_string()).collect()).unwrap_or_default();
                let dialect = if rng.gen_bool(0.5) { Dialect::Sparql } else { Dialect::VisualJson };
                let text = crate::query::emit(&ast, dialect).text;
                layers.insert(who, ids);
                push(&mut steps, &mut t, who, Action::Query { dialect, text, spawn: None });
            }
            40..=64 => {
                let who = *live.choose(&mut rng).expect("live actor");
                let owners: Vec<&str> = layers.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k).collect();
                let Some(owner) = owners.choose(&mut rng) else { continue };
                let rid = layers[owner].choose(&mut rng).expect("non-empty layer").clone();
                let target = marker_id(&format!("{{{owner}}}"), &rid);
                let kind = if rng.gen_bool(0.7) { InteractionKind::Grab } else { InteractionKind::Release };
                let data = InteractionData {
                    at_px: rng.gen_bool(0.3).then(|| [rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)]),
                    ..Default::default()
                };
                push(&mut steps, &mut t, who, Action::Interaction { kind, target: Some(target), data });
            }
            65..=76 => {
                let who = *live.choose(&mut rng).expect("live actor");
                let data = InteractionData {
                    at_px: Some([rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)]),
                    ..Default::default()
                };
                push(&mut steps, &mut t, who, Action::Interaction { kind: InteractionKind::MenuOpen, target: None, data });
            }
            77..=86 => {
                let who = *live.choose(&mut rng).expect("live actor");
                let lat = rng.gen_range(-50.0..40.0);
                let lon = rng.gen_range(-150.0..140.0);
                let region = GeoBounds {
                    north_west: GeoPoint { lat: lat + 10.0, lon },
                    south_east: GeoPoint { lat, lon: lon + 10.0 },
                };
                let data = InteractionData {
                    region: Some(region),
                    widget_px: Some([1700.0, rng.gen_range(100.0..400.0)]),
                    at_px: None,
                };
                push(&mut steps, &mut t, who, Action::Interaction { kind: InteractionKind::SelectRegion, target: None, data });
            }
            87..=93 => {
                let ars: Vec<&str> = live.iter().copied().filter(|n| n.starts_with("ar")).collect();
                let Some(who) = ars.choose(&mut rng) else { continue };
                push(&mut steps, &mut t, who, Action::Disconnect);
                joined.insert(who, false);
                // Markers survive their requester, but targets naming a
                // departed id would go stale once the name rebinds.
                layers.remove(who);
            }
            _ => {
                let Some(who) = absent.choose(&mut rng) else { continue };
                push(&mut steps, &mut t, who, Action::Join);
                joined.insert(who, true);
            }
        }
        count += 1;
    }
    // Everyone ends connected, so every final replica is compared.
    for (who, j) in joined {
        if !j {
            push(&mut steps, &mut t, who, Action::Join);
        }
    }
    Scenario {
        version: SCENARIO_VERSION,
        session: "s1".into(),
        seed,
        actors,
        actions: steps,
    }
}

fn actor(name: &str, role: ClientRole, yaw_deg: f64) -> Actor {
    let mut placement = Placement::default();
    placement.qr_pose.yaw_deg = yaw_deg;
    Actor {
        name: name.into(),
        role,
        placement,
    }
}

fn random_query(rng: &mut ChaCha8Rng, records: &[&crate::datastore::AssetRecord]) -> QueryAst {
    let mut ast = QueryAst::default();
    let lat = rng.gen_range(-60.0..30.0);
    let lon = rng.gen_range(-170.0..110.0);
    ast.regions.push(GeoBounds {
        north_west: GeoPoint { lat: lat + 30.0, lon },
        south_east: GeoPoint { lat, lon: lon + 60.0 },
    });
    if rng.gen_bool(0.3) {
        if let Some(r) = records.choose(rng) {
            if let Some((k, v)) = r.attrs.iter().next() {
                let value = match v {
                    crate::datastore::AttrValue::Num(n) => Value::Num(*n),
                    crate::datastore::AttrValue::Str(s) => Value::Str(s.clone()),
                };
                ast.predicates.push(Predicate::new(k.clone(), CompareOp::Ne, value));
            }
        }
    }
    if rng.gen_bool(0.2) {
        ast.limit = Some(rng.gen_range(1..5));
    }
    ast
}
