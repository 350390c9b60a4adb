//! TOML server configuration.
//!
//! Relative paths are resolved against the directory of the config file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use surface_sync_core::datastore::Format;
use surface_sync_core::geo::{GeoPoint, ViewState};
use surface_sync_core::protocol::CalibrationMeta;
use surface_sync_core::session::{SessionConfig, DEFAULT_ARC_HEIGHT_M};
use surface_sync_core::tuio::DEFAULT_REGION_SIDE_DEG;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_session")]
    pub session: String,
    #[serde(default = "default_max_clients")]
    pub max_clients: usize,
    #[serde(default = "default_arc_height")]
    pub arc_height_m: f64,
    /// Per-client outbound queue; a client that falls this far behind is dropped.
    #[serde(default = "default_send_queue")]
    pub send_queue: usize,
    /// PING interval; 0 disables the heartbeat.
    #[serde(default = "default_heartbeat")]
    pub heartbeat_secs: u64,
    /// Append every session input here (JSONL), for `serve --replay`.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub tuio: TuioConfig,
    #[serde(default)]
    pub qr: QrConfig,
    #[serde(default)]
    pub view: ViewConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuioConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_tuio_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_region_side")]
    pub region_side_deg: f64,
}

impl Default for TuioConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bind: default_tuio_bind(),
            region_side_deg: DEFAULT_REGION_SIDE_DEG,
        }
    }
}

/// Where the shared display renders the alignment placard. `screen_px`
/// defaults to the bottom-left corner of the configured screen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrConfig {
    pub screen_px: Option<[f64; 2]>,
    pub rendered_side_px: Option<f64>,
    pub physical_side_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    /// `[lat, lon]`.
    pub center: [f64; 2],
    pub zoom: f64,
    #[serde(default)]
    pub orientation_deg: f64,
    /// `[width, height]` of the shared display in px.
    pub screen: [u32; 2],
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            center: [20.0, 0.0],
            zoom: 2.0,
            orientation_deg: 0.0,
            screen: [1920, 1080],
        }
    }
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("literal")
}
fn default_session() -> String {
    "s1".into()
}
fn default_max_clients() -> usize {
    16
}
fn default_arc_height() -> f64 {
    DEFAULT_ARC_HEIGHT_M
}
fn default_send_queue() -> usize {
    1024
}
fn default_heartbeat() -> u64 {
    10
}
fn default_format() -> Format {
    Format::Csv
}
fn default_true() -> bool {
    true
}
fn default_tuio_bind() -> SocketAddr {
    "0.0.0.0:3333".parse().expect("literal")
}
fn default_region_side() -> f64 {
    DEFAULT_REGION_SIDE_DEG
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.path = base.join(&cfg.dataset.path);
        if let Some(j) = &cfg.journal {
            cfg.journal = Some(base.join(j));
        }
        cfg.session_config()?;
        Ok(cfg)
    }

    /// A config serving `dataset` with everything else at defaults.
    pub fn with_dataset(path: impl Into<PathBuf>, format: Format) -> Self {
        Self {
            listen: default_listen(),
            session: default_session(),
            max_clients: default_max_clients(),
            arc_height_m: default_arc_height(),
            send_queue: default_send_queue(),
            heartbeat_secs: default_heartbeat(),
            journal: None,
            dataset: DatasetConfig { path: path.into(), format },
            tuio: TuioConfig::default(),
            qr: QrConfig::default(),
            view: ViewConfig::default(),
        }
    }

    pub fn initial_view(&self) -> anyhow::Result<ViewState> {
        let v = &self.view;
        let center = GeoPoint::new(v.center[0], v.center[1]).context("view.center")?;
        ViewState::new(center, v.zoom, v.orientation_deg, v.screen[0], v.screen[1]).context("view")
    }

    pub fn session_config(&self) -> anyhow::Result<SessionConfig> {
        let mut s = SessionConfig::new(self.session.clone(), self.initial_view()?);
        s.max_clients = self.max_clients;
        s.arc_height_m = self.arc_height_m;
        s.tuio_region_side_deg = self.tuio.region_side_deg;
        let d = &s.calibration;
        s.calibration = CalibrationMeta {
            session: self.session.clone(),
            qr_screen_px: self.qr.screen_px.unwrap_or(d.qr_screen_px),
            qr_rendered_side_px: self.qr.rendered_side_px.unwrap_or(d.qr_rendered_side_px),
            qr_physical_side_m: self.qr.physical_side_m.unwrap_or(d.qr_physical_side_m),
        };
        anyhow::ensure!(
            s.calibration.qr_rendered_side_px > 0.0 && s.calibration.qr_physical_side_m > 0.0,
            "qr sides must be positive"
        );
        anyhow::ensure!(self.send_queue > 0, "send_queue must be positive");
        Ok(s)
    }
}
