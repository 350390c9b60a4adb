//! Client-side view of the room, rebuilt purely from received envelopes.

use std::collections::BTreeMap;

use crate::geo::{calibrate_anchor, geo_to_ar, screen_to_world, AnchorCalibration, QrWorldPose, ViewState};
use crate::protocol::{ArObject, ClientRole, Envelope, ErrorMsg, Message, QueryResult};

/// Where a simulated headset believes the QR placard sits in its world.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Placement {
    pub qr_pose: QrWorldPose,
    pub table_normal: [f64; 3],
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            qr_pose: QrWorldPose {
                origin: [0.0, 0.0, 0.0],
                yaw_deg: 0.0,
            },
            table_normal: [0.0, 1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Replica {
    pub client_id: Option<String>,
    pub role: Option<ClientRole>,
    pub view: Option<ViewState>,
    pub objects: BTreeMap<String, ArObject>,
    /// AR-world position of every object, in meters.
    pub placements: BTreeMap<String, [f64; 3]>,
    pub calibration: Option<AnchorCalibration>,
    pub placement: Placement,
    /// Spawns and updates ignored for carrying a non-increasing version.
    pub stale_dropped: u64,
    pub last_result: Option<QueryResult>,
    pub errors: Vec<ErrorMsg>,
}

impl Replica {
    pub fn new(placement: Placement) -> Self {
        Self {
            placement,
            ..Default::default()
        }
    }

    pub fn apply(&mut self, env: &Envelope) {
        match &env.body {
            Message::Welcome(w) => {
                self.client_id = Some(w.client_id.clone());
                self.role = Some(w.role);
                self.view = Some(w.view);
                self.objects = w
                    .snapshot
                    .iter()
                    .map(|o| (o.object_id.clone(), o.clone()))
                    .collect();
                self.calibration = calibrate_anchor(
                    self.placement.qr_pose,
                    w.calibration.qr_screen_px,
                    w.calibration.qr_rendered_side_px,
                    w.calibration.qr_physical_side_m,
                    self.placement.table_normal,
                )
                .ok();
                self.recompute_all();
            }
            Message::ViewUpdate(v) => {
                self.view = Some(*v);
                self.recompute_all();
            }
            Message::ObjectSpawn(o) => {
                if self.objects.get(&o.object_id).is_some_and(|cur| cur.version >= o.version) {
                    self.stale_dropped += 1;
                    return;
                }
                self.objects.insert(o.object_id.clone(), o.clone());
                self.recompute(&o.object_id);
            }
            Message::ObjectUpdate(u) => match self.objects.get_mut(&u.object_id) {
                Some(o) if o.version < u.version => {
                    o.apply(u.version, &u.fields);
                    self.recompute(&u.object_id);
                }
                _ => self.stale_dropped += 1,
            },
            Message::ObjectDespawn(d) => {
                self.objects.remove(&d.object_id);
                self.placements.remove(&d.object_id);
            }
            Message::QueryResult(r) => self.last_result = Some(r.clone()),
            Message::Error(e) => self.errors.push(e.clone()),
            _ => {}
        }
    }

    /// Placement of one object under the current view and calibration.
    pub fn place(&self, o: &ArObject) -> Option<[f64; 3]> {
        let c = self.calibration.as_ref()?;
        match (o.geo, o.screen_px) {
            (Some(g), _) => geo_to_ar(c, self.view.as_ref()?, g, o.altitude_m).ok(),
            (None, Some(px)) => Some(screen_to_world(c, px, o.altitude_m)),
            (None, None) => None,
        }
    }

    fn recompute(&mut self, id: &str) {
        match self.objects.get(id).and_then(|o| self.place(o)) {
            Some(p) => {
                self.placements.insert(id.to_string(), p);
            }
            None => {
                self.placements.remove(id);
            }
        }
    }

    fn recompute_all(&mut self) {
        self.placements = self
            .objects
            .values()
            .filter_map(|o| self.place(o).map(|p| (o.object_id.clone(), p)))
            .collect();
    }

    /// World position of the current view center at table height.
    pub fn view_center_world(&self) -> Option<[f64; 3]> {
        let c = self.calibration.as_ref()?;
        let v = self.view.as_ref()?;
        Some(screen_to_world(c, v.screen_center(), 0.0))
    }
}
