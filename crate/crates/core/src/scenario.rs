//! Scenario description and its TOML file format.
//!
//! The key set is closed: any key not listed below is rejected with its name.
//!
//! ```toml
//! name = "a1_30ms"
//! seed = 42                  # optional
//! segment_bytes = 1500       # optional
//! inference_delay_ms = 50.0  # optional, recorded only
//! fps_override = 0           # optional, forces every UE's frame rate
//!
//! [carrier]
//! bandwidth_mhz = 5
//! gnb_antennas = "8x8"       # optional metadata
//!
//! [[ue]]
//! id = 0
//! position_m = [5000.0, 0.0]
//! speed_mps = 0.0            # optional
//! heading = [1.0, 0.0]       # optional
//! required_latency_ms = 30.0
//! frame_bytes = 7500         # optional
//! antennas = "2x2"           # optional metadata
//! cqi = { mode = "constant", value = 10 }
//! # cqi = { mode = "ramp", anchors = [[0.0, 15.0], [15000.0, 6.0]] }
//! # cqi = { mode = "path-loss", calibration = [[600.0, 15.0], [3600.0, 8.0]] }
//!
//! [training]                 # optional, see TrainingConfig
//! episodes = 300
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dqn::TrainingConfig;
use crate::phy::{CarrierConfig, Cqi, CqiTrace, PhyError, UeKinematics};
use crate::uplink::{QosRequirement, DEFAULT_FRAME_BYTES, DEFAULT_SEGMENT_BYTES};

pub const MAX_UES: usize = 4;
pub const DEFAULT_SEED: u64 = 42;
/// Server-side processing delay recorded alongside results; not part of the
/// uplink latency metric.
pub const DEFAULT_INFERENCE_DELAY_MS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(key: impl Into<String>, message: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid { key: key.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeSpec {
    pub id: u32,
    pub kinematics: UeKinematics,
    pub cqi: CqiTrace,
    pub qos: QosRequirement,
    pub frame_bytes: u32,
    pub antennas: Option<String>,
}

impl UeSpec {
    pub fn position_at(&self, time_ms: f64) -> [f64; 2] {
        self.kinematics.advance(time_ms).position
    }

    pub fn cqi_at(&self, time_ms: f64) -> Cqi {
        let distance = self.kinematics.advance(time_ms).distance_m();
        self.cqi.cqi_at(time_ms, distance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub carrier: CarrierConfig,
    /// Sorted by id; position in this list is the UE index used everywhere else.
    pub ues: Vec<UeSpec>,
    pub segment_bytes: u32,
    pub fps_override: Option<u32>,
    pub inference_delay_ms: f64,
    pub gnb_antennas: Option<String>,
    pub training: TrainingConfig,
}

impl Scenario {
    pub fn n_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn episode_steps(&self) -> usize {
        self.training.steps_per_episode
    }

    /// Copy with every UE's latency target replaced.
    pub fn with_required_latency(&self, ms: f64) -> Result<Self, ScenarioError> {
        let qos = QosRequirement::new(ms).map_err(|e| invalid("required_latency_ms", e))?;
        let mut s = self.clone();
        for ue in &mut s.ues {
            ue.qos = qos;
        }
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        file.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ScenarioError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
        Self::from_toml_str(text)
    }
}

/// Shipped scenario presets as `(name, toml)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("a1_24ms", include_str!("../scenarios/a1_24ms.toml")),
    ("a1_30ms", include_str!("../scenarios/a1_30ms.toml")),
    ("a1_40ms", include_str!("../scenarios/a1_40ms.toml")),
    ("a2_24ms", include_str!("../scenarios/a2_24ms.toml")),
    ("b1_30ms", include_str!("../scenarios/b1_30ms.toml")),
    ("b1_18ms", include_str!("../scenarios/b1_18ms.toml")),
    ("b2_30ms", include_str!("../scenarios/b2_30ms.toml")),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    seed: Option<u64>,
    segment_bytes: Option<u32>,
    inference_delay_ms: Option<f64>,
    fps_override: Option<u32>,
    carrier: CarrierSection,
    #[serde(default)]
    ue: Vec<UeSection>,
    #[serde(default)]
    training: TrainingConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CarrierSection {
    bandwidth_mhz: u32,
    gnb_antennas: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UeSection {
    id: u32,
    position_m: [f64; 2],
    speed_mps: Option<f64>,
    heading: Option<[f64; 2]>,
    required_latency_ms: f64,
    frame_bytes: Option<u32>,
    antennas: Option<String>,
    cqi: CqiSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CqiSection {
    mode: String,
    value: Option<i64>,
    anchors: Option<Vec<[f64; 2]>>,
    calibration: Option<Vec<[f64; 2]>>,
}

impl CqiSection {
    fn into_trace(self, key: &str) -> Result<CqiTrace, ScenarioError> {
        let phy = |e: PhyError| invalid(key, e);
        let pairs = |v: Vec<[f64; 2]>| v.into_iter().map(|[a, b]| (a, b)).collect::<Vec<_>>();
        match self.mode.as_str() {
            "constant" => {
                let v = self.value.ok_or_else(|| invalid(format!("{key}.value"), "required for constant mode"))?;
                Ok(CqiTrace::Constant(Cqi::new(v).map_err(phy)?))
            }
            "ramp" => {
                let a = self.anchors.ok_or_else(|| invalid(format!("{key}.anchors"), "required for ramp mode"))?;
                CqiTrace::ramp(pairs(a)).map_err(phy)
            }
            "path-loss" => {
                let c = self
                    .calibration
                    .ok_or_else(|| invalid(format!("{key}.calibration"), "required for path-loss mode"))?;
                CqiTrace::path_loss(pairs(c)).map_err(phy)
            }
            other => Err(invalid(format!("{key}.mode"), format!("unknown mode `{other}` (constant, ramp, path-loss)"))),
        }
    }
}

impl ScenarioFile {
    fn validate(self) -> Result<Scenario, ScenarioError> {
        let carrier = CarrierConfig::new(self.carrier.bandwidth_mhz).map_err(|e| invalid("carrier.bandwidth_mhz", e))?;
        if self.ue.is_empty() || self.ue.len() > MAX_UES {
            return Err(invalid("ue", format!("need 1..={MAX_UES} UEs, got {}", self.ue.len())));
        }
        let mut ues = Vec::with_capacity(self.ue.len());
        for (i, u) in self.ue.into_iter().enumerate() {
            let key = format!("ue[{i}]");
            if ues.iter().any(|s: &UeSpec| s.id == u.id) {
                return Err(invalid(format!("{key}.id"), format!("duplicate UE id {}", u.id)));
            }
            let qos = QosRequirement::new(u.required_latency_ms).map_err(|e| invalid(format!("{key}.required_latency_ms"), e))?;
            let speed = u.speed_mps.unwrap_or(0.0);
            if !(speed >= 0.0 && speed.is_finite()) {
                return Err(invalid(format!("{key}.speed_mps"), "must be finite and non-negative"));
            }
            let heading = u.heading.unwrap_or([1.0, 0.0]);
            let norm = heading[0].hypot(heading[1]);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(invalid(format!("{key}.heading"), "must be a non-zero vector"));
            }
            let frame_bytes = u.frame_bytes.unwrap_or(DEFAULT_FRAME_BYTES);
            if frame_bytes == 0 {
                return Err(invalid(format!("{key}.frame_bytes"), "must be positive"));
            }
            ues.push(UeSpec {
                id: u.id,
                kinematics: UeKinematics {
                    position: u.position_m,
                    speed_mps: speed,
                    heading: [heading[0] / norm, heading[1] / norm],
                },
                cqi: u.cqi.into_trace(&format!("{key}.cqi"))?,
                qos,
                frame_bytes,
                antennas: u.antennas,
            });
        }
        ues.sort_by_key(|u| u.id);
        let segment_bytes = self.segment_bytes.unwrap_or(DEFAULT_SEGMENT_BYTES);
        if segment_bytes == 0 {
            return Err(invalid("segment_bytes", "must be positive"));
        }
        self.training.validate().map_err(|m| invalid("training", m))?;
        Ok(Scenario {
            name: self.name,
            seed: self.seed,
            carrier,
            ues,
            segment_bytes,
            fps_override: self.fps_override,
            inference_delay_ms: self.inference_delay_ms.unwrap_or(DEFAULT_INFERENCE_DELAY_MS),
            gnb_antennas: self.carrier.gnb_antennas,
            training: self.training,
        })
    }
}
