//! Spherical Web-Mercator math shared by the server and every client.
//!
//! Three coordinate spaces are involved:
//!
//! * geographic degrees ([`GeoPoint`]),
//! * screen pixels of the shared display, derived from a [`ViewState`]
//!   using the 256-px tile convention with real-valued zoom,
//! * AR-world meters, anchored on the QR placard ([`AnchorCalibration`]).
//!
//! Screen pixels use the usual raster convention: x grows to the right and
//! y grows downwards.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sphere radius used by Web Mercator.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Latitude band inside which the projection is defined.
pub const MAX_MERCATOR_LAT: f64 = 85.051_128_78;
/// Half the side of the projected square, `R * pi`.
pub const MERCATOR_HALF_EXTENT_M: f64 = 20_037_508.342_789_244;
pub const TILE_SIZE_PX: f64 = 256.0;

const BOUNDS_EPS_DEG: f64 = 1e-9;
const UNIT_NORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside the Mercator band")]
    LatOutOfRange(f64),
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("projected point ({x}, {y}) outside the Mercator square")]
    OutOfBounds { x: f64, y: f64 },
    #[error("screen point maps to latitude {0}, outside the Mercator band")]
    OutOfBand(f64),
    #[error("degenerate QR calibration: {0}")]
    DegenerateQr(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Checked constructor: latitude in [-90, 90], longitude in [-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::InvalidCoordinate(format!("lat {}", self.lat)));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::InvalidCoordinate(format!("lon {}", self.lon)));
        }
        Ok(())
    }

    /// Clamps latitude into the Mercator band and wraps longitude into (-180, 180].
    pub fn clamp_mercator(self) -> Self {
        Self {
            lat: self.lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT),
            lon: wrap_lon(self.lon),
        }
    }

    pub fn in_mercator_band(&self) -> bool {
        self.lat.abs() <= MAX_MERCATOR_LAT
    }
}

/// Wraps a longitude into (-180, 180].
pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// An axis-aligned geographic rectangle. Antimeridian wrap is never implied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub north_west: GeoPoint,
    pub south_east: GeoPoint,
}

impl GeoBounds {
    pub fn new(north_west: GeoPoint, south_east: GeoPoint) -> Result<Self, GeoError> {
        let b = Self {
            north_west,
            south_east,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        self.north_west.validate()?;
        self.south_east.validate()?;
        if self.north_west.lat < self.south_east.lat {
            return Err(GeoError::InvalidCoordinate(format!(
                "north {} below south {}",
                self.north_west.lat, self.south_east.lat
            )));
        }
        Ok(())
    }

    /// True when the west edge lies east of the east edge.
    pub fn wraps_antimeridian(&self) -> bool {
        self.north_west.lon > self.south_east.lon
    }

    /// Inclusive containment, no antimeridian wrap.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat <= self.north_west.lat
            && p.lat >= self.south_east.lat
            && p.lon >= self.north_west.lon
            && p.lon <= self.south_east.lon
    }

    /// Midpoint in degrees.
    pub fn centroid(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.north_west.lat + self.south_east.lat) / 2.0,
            lon: (self.north_west.lon + self.south_east.lon) / 2.0,
        }
    }

    pub fn north(&self) -> f64 {
        self.north_west.lat
    }
    pub fn south(&self) -> f64 {
        self.south_east.lat
    }
    pub fn west(&self) -> f64 {
        self.north_west.lon
    }
    pub fn east(&self) -> f64 {
        self.south_east.lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MercatorMeters {
    pub x: f64,
    pub y: f64,
}

pub fn project_mercator(p: GeoPoint) -> Result<MercatorMeters, GeoError> {
    check_band(p.lat)?;
    let lam = p.lon.to_radians();
    let phi = p.lat.to_radians();
    Ok(MercatorMeters {
        x: EARTH_RADIUS_M * lam,
        y: EARTH_RADIUS_M * phi.tan().asinh(),
    })
}

pub fn unproject_mercator(m: MercatorMeters) -> Result<GeoPoint, GeoError> {
    // the band edge 85.05112878 projects ~2.5e-4 m past R*pi
    let limit = MERCATOR_HALF_EXTENT_M + 1e-3;
    if !m.x.is_finite() || !m.y.is_finite() || m.x.abs() > limit || m.y.abs() > limit {
        return Err(GeoError::OutOfBounds { x: m.x, y: m.y });
    }
    let lon = (m.x / EARTH_RADIUS_M).to_degrees();
    let lat = (m.y / EARTH_RADIUS_M).sinh().atan().to_degrees();
    Ok(GeoPoint { lat, lon })
}

fn check_band(lat: f64) -> Result<(), GeoError> {
    if !lat.is_finite() || lat.abs() > MAX_MERCATOR_LAT {
        Err(GeoError::LatOutOfRange(lat))
    } else {
        Ok(())
    }
}

/// Mercator coordinates normalised to the unit square, origin at the
/// north-west corner of the world.
fn normalized(p: GeoPoint) -> [f64; 2] {
    let phi = p.lat.to_radians();
    [
        (p.lon + 180.0) / 360.0,
        (1.0 - phi.tan().asinh() / PI) / 2.0,
    ]
}

/// Inverse of [`normalized`], without range checks or longitude wrapping.
fn denormalized(n: [f64; 2]) -> GeoPoint {
    GeoPoint {
        lat: (PI * (1.0 - 2.0 * n[1])).sinh().atan().to_degrees(),
        lon: n[0] * 360.0 - 180.0,
    }
}

/// Rotation applied to screen offsets for a given map bearing.
///
/// In y-down pixel space this turns content clockwise on screen; a bearing of
/// 90 degrees maps a +x offset onto +y.
fn rotate2(v: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

/// The shared map camera.
///
/// `bounds` is a derived field: the axis-aligned geographic envelope of the
/// four screen corners, clamped to the Mercator band and to [-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub bounds: GeoBounds,
    pub center: GeoPoint,
    pub zoom: f64,
    pub orientation_deg: f64,
    pub screen_w: u32,
    pub screen_h: u32,
}

impl ViewState {
    pub fn new(
        center: GeoPoint,
        zoom: f64,
        orientation_deg: f64,
        screen_w: u32,
        screen_h: u32,
    ) -> Result<Self, GeoError> {
        center.validate()?;
        check_band(center.lat)?;
        if !zoom.is_finite() || zoom < 0.0 {
            return Err(GeoError::InvalidView(format!("zoom {zoom}")));
        }
        if !orientation_deg.is_finite() {
            return Err(GeoError::InvalidView(format!(
                "orientation {orientation_deg}"
            )));
        }
        if screen_w == 0 || screen_h == 0 {
            return Err(GeoError::InvalidView("zero screen dimension".into()));
        }
        let orientation_deg = normalize_bearing(orientation_deg);
        let bounds = derive_bounds(center, zoom, orientation_deg, screen_w, screen_h);
        Ok(Self {
            bounds,
            center,
            zoom,
            orientation_deg,
            screen_w,
            screen_h,
        })
    }

    /// Checks the stored bounds against the ones re-derived from the camera.
    pub fn check_consistency(&self) -> Result<(), GeoError> {
        let fresh = Self::new(
            self.center,
            self.zoom,
            self.orientation_deg,
            self.screen_w,
            self.screen_h,
        )?;
        if fresh.orientation_deg != self.orientation_deg {
            return Err(GeoError::InvalidView(format!(
                "orientation {} not in [0, 360)",
                self.orientation_deg
            )));
        }
        let pairs = [
            (fresh.bounds.north_west.lat, self.bounds.north_west.lat),
            (fresh.bounds.north_west.lon, self.bounds.north_west.lon),
            (fresh.bounds.south_east.lat, self.bounds.south_east.lat),
            (fresh.bounds.south_east.lon, self.bounds.south_east.lon),
        ];
        if pairs
            .iter()
            .any(|(a, b)| !((a - b).abs() <= BOUNDS_EPS_DEG))
        {
            return Err(GeoError::InvalidView(
                "bounds disagree with center/zoom/orientation/screen".into(),
            ));
        }
        Ok(())
    }

    pub fn world_size_px(&self) -> f64 {
        TILE_SIZE_PX * self.zoom.exp2()
    }

    pub fn screen_center(&self) -> [f64; 2] {
        [self.screen_w as f64 / 2.0, self.screen_h as f64 / 2.0]
    }

    /// Moves the content by `delta_px`: the point under the screen center
    /// afterwards is the one that was at `center - delta_px`.
    pub fn panned_by(&self, delta_px: [f64; 2]) -> Result<Self, GeoError> {
        let ws = self.world_size_px();
        let nc = normalized(self.center);
        let off = rotate2(delta_px, -self.orientation_deg);
        let n = [nc[0] - off[0] / ws, nc[1] - off[1] / ws];
        let c = denormalized(n).clamp_mercator();
        Self::new(
            c,
            self.zoom,
            self.orientation_deg,
            self.screen_w,
            self.screen_h,
        )
    }

    /// Changes zoom by `dz` while keeping the geographic point under
    /// `anchor_px` fixed on screen. Zoom never drops below 0.
    pub fn zoomed_about(&self, dz: f64, anchor_px: [f64; 2]) -> Result<Self, GeoError> {
        let new_zoom = (self.zoom + dz).max(0.0);
        let sc = self.screen_center();
        let rel = rotate2([anchor_px[0] - sc[0], anchor_px[1] - sc[1]], -self.orientation_deg);
        let nc = normalized(self.center);
        let ws_old = self.world_size_px();
        let ws_new = TILE_SIZE_PX * new_zoom.exp2();
        let na = [nc[0] + rel[0] / ws_old, nc[1] + rel[1] / ws_old];
        let n = [na[0] - rel[0] / ws_new, na[1] - rel[1] / ws_new];
        let c = denormalized(n).clamp_mercator();
        Self::new(
            c,
            new_zoom,
            self.orientation_deg,
            self.screen_w,
            self.screen_h,
        )
    }
}

fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

fn derive_bounds(center: GeoPoint, zoom: f64, bearing: f64, w: u32, h: u32) -> GeoBounds {
    let ws = TILE_SIZE_PX * zoom.exp2();
    let nc = normalized(center);
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut lat = [f64::INFINITY, f64::NEG_INFINITY];
    let mut lon = [f64::INFINITY, f64::NEG_INFINITY];
    for corner in [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]] {
        let off = rotate2(corner, -bearing);
        let n = [nc[0] + off[0] / ws, nc[1] + off[1] / ws];
        let g = denormalized(n);
        lat = [lat[0].min(g.lat), lat[1].max(g.lat)];
        lon = [lon[0].min(g.lon), lon[1].max(g.lon)];
    }
    let cl = |v: f64| v.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT);
    let cn = |v: f64| v.clamp(-180.0, 180.0);
    GeoBounds {
        north_west: GeoPoint {
            lat: cl(lat[1]),
            lon: cn(lon[0]),
        },
        south_east: GeoPoint {
            lat: cl(lat[0]),
            lon: cn(lon[1]),
        },
    }
}

/// Screen pixel of a geographic point. Off-screen points are not clipped.
pub fn geo_to_screen(view: &ViewState, p: GeoPoint) -> Result<[f64; 2], GeoError> {
    check_band(p.lat)?;
    let ws = view.world_size_px();
    let n = normalized(p);
    let nc = normalized(view.center);
    let off = rotate2([(n[0] - nc[0]) * ws, (n[1] - nc[1]) * ws], view.orientation_deg);
    let sc = view.screen_center();
    Ok([sc[0] + off[0], sc[1] + off[1]])
}

/// Geographic point under a screen pixel. Longitude is returned unwrapped so
/// that the mapping stays the exact inverse of [`geo_to_screen`].
pub fn screen_to_geo(view: &ViewState, px: [f64; 2]) -> Result<GeoPoint, GeoError> {
    let ws = view.world_size_px();
    let sc = view.screen_center();
    let off = rotate2([px[0] - sc[0], px[1] - sc[1]], -view.orientation_deg);
    let nc = normalized(view.center);
    let g = denormalized([nc[0] + off[0] / ws, nc[1] + off[1] / ws]);
    if !g.lat.is_finite() || g.lat.abs() > MAX_MERCATOR_LAT {
        return Err(GeoError::OutOfBand(g.lat));
    }
    Ok(g)
}

/// Pose of the QR placard in the AR world, as given to a client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QrWorldPose {
    pub origin: [f64; 3],
    pub yaw_deg: f64,
}

/// Screen-pixel to AR-world transform for one client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorCalibration {
    pub origin_world: [f64; 3],
    pub px_to_m: f64,
    pub yaw_deg: f64,
    pub qr_screen_px: [f64; 2],
    pub table_normal: [f64; 3],
}

pub fn calibrate_anchor(
    pose: QrWorldPose,
    qr_screen_px: [f64; 2],
    qr_rendered_side_px: f64,
    qr_physical_side_m: f64,
    table_normal: [f64; 3],
) -> Result<AnchorCalibration, GeoError> {
    if !(qr_rendered_side_px > 0.0) || !qr_rendered_side_px.is_finite() {
        return Err(GeoError::DegenerateQr(format!(
            "rendered side {qr_rendered_side_px} px"
        )));
    }
    if !(qr_physical_side_m > 0.0) || !qr_physical_side_m.is_finite() {
        return Err(GeoError::DegenerateQr(format!(
            "physical side {qr_physical_side_m} m"
        )));
    }
    if (norm(table_normal) - 1.0).abs() > UNIT_NORMAL_TOL {
        return Err(GeoError::DegenerateQr(format!(
            "table normal {table_normal:?} is not unit length"
        )));
    }
    Ok(AnchorCalibration {
        origin_world: pose.origin,
        px_to_m: qr_physical_side_m / qr_rendered_side_px,
        yaw_deg: pose.yaw_deg,
        qr_screen_px,
        table_normal,
    })
}

impl AnchorCalibration {
    /// World directions of screen +x and screen +y (down) before yaw.
    ///
    /// Screen +x follows world +X projected into the table plane (world +Z
    /// when the normal is close to X); screen +y is `normal x right`.
    pub fn table_axes(&self) -> ([f64; 3], [f64; 3]) {
        let n = self.table_normal;
        let reference = if n[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let right = normalize(sub(reference, scale(n, dot(reference, n))));
        let down = cross(n, right);
        (right, down)
    }

    /// Planar table coordinates (meters along the un-yawed table axes) of a
    /// screen pixel, relative to the QR center.
    pub fn planar_offset(&self, px: [f64; 2]) -> [f64; 2] {
        let d = [
            (px[0] - self.qr_screen_px[0]) * self.px_to_m,
            (px[1] - self.qr_screen_px[1]) * self.px_to_m,
        ];
        rotate2(d, self.yaw_deg)
    }
}

pub fn screen_to_world(c: &AnchorCalibration, px: [f64; 2], altitude_m: f64) -> [f64; 3] {
    let d = c.planar_offset(px);
    let (right, down) = c.table_axes();
    let mut out = c.origin_world;
    for i in 0..3 {
        out[i] += d[0] * right[i] + d[1] * down[i] + altitude_m * c.table_normal[i];
    }
    out
}

pub fn geo_to_ar(
    c: &AnchorCalibration,
    view: &ViewState,
    p: GeoPoint,
    altitude_m: f64,
) -> Result<[f64; 3], GeoError> {
    Ok(screen_to_world(c, geo_to_screen(view, p)?, altitude_m))
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}
