//! TDD frame structure, CQI based link adaptation, UE kinematics and
//! scripted CQI evolution.
//!
//! Numerology 1 (30 kHz subcarrier spacing) is assumed throughout, so a slot
//! lasts 0.5 ms and a 5 ms TDD period holds 10 slots. Slots are laid out
//! downlink-first inside every period.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slot duration at 30 kHz subcarrier spacing, in microseconds.
pub const SLOT_US: u64 = 500;
/// TDD pattern periodicity in milliseconds.
pub const PERIODICITY_MS: u32 = 5;
/// Data resource elements per PRB per slot (standard TBS cap, overhead absorbed).
pub const DATA_RE_PER_PRB: f64 = 156.0;
/// Highest MCS index reachable from the CQI mapping.
pub const MAX_MCS: u8 = 27;

/// Spectral efficiency (bits per resource element) for CQI 1..=15, CQI table 1.
const CQI_EFFICIENCY: [f64; 15] = [
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223,
    3.9023, 4.5234, 5.1152, 5.5547,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("tdd split {dl}DL-{ul}UL must sum to {expected} slots with at least one of each")]
    InvalidTdd { dl: u8, ul: u8, expected: u8 },
    #[error("unsupported bandwidth {0} MHz (expected 5 or 10)")]
    UnsupportedBandwidth(u32),
    #[error("cqi out of 1..15: {0}")]
    CqiOutOfRange(i64),
    #[error("cqi trace has no anchor points")]
    EmptyTrace,
    #[error("cqi trace anchors must be sorted by strictly increasing {0}")]
    UnsortedAnchors(&'static str),
    #[error("path-loss calibration must be monotone non-increasing in distance")]
    NonMonotoneCalibration,
}

/// Downlink/uplink slot split of one 5 ms period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TddConfig {
    dl_slots: u8,
    ul_slots: u8,
}

impl TddConfig {
    pub fn new(dl_slots: u8, ul_slots: u8) -> Result<Self, PhyError> {
        let expected = Self::slots_per_period();
        if dl_slots == 0 || ul_slots == 0 || u16::from(dl_slots) + u16::from(ul_slots) != u16::from(expected) {
            return Err(PhyError::InvalidTdd { dl: dl_slots, ul: ul_slots, expected });
        }
        Ok(Self { dl_slots, ul_slots })
    }

    /// Slots in one period: periodicity / slot duration.
    pub const fn slots_per_period() -> u8 {
        (PERIODICITY_MS as u64 * 1000 / SLOT_US) as u8
    }

    pub fn dl_slots(&self) -> u8 {
        self.dl_slots
    }

    pub fn ul_slots(&self) -> u8 {
        self.ul_slots
    }

    /// True iff `slot_index` falls in the uplink block of its period.
    pub fn is_uplink_slot(&self, slot_index: u64) -> bool {
        slot_index % u64::from(Self::slots_per_period()) >= u64::from(self.dl_slots)
    }

    /// Fraction of slots carrying uplink.
    pub fn ul_share(&self) -> f64 {
        f64::from(self.ul_slots) / f64::from(Self::slots_per_period())
    }
}

impl std::fmt::Display for TddConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}DL-{}UL", self.dl_slots, self.ul_slots)
    }
}

/// Carrier bandwidth and its PRB count at 30 kHz SCS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarrierConfig {
    pub bandwidth_mhz: u32,
    pub scs_khz: u32,
    pub n_prb: u32,
}

impl CarrierConfig {
    pub fn new(bandwidth_mhz: u32) -> Result<Self, PhyError> {
        // 3GPP maximum transmission bandwidth configuration, FR1, 30 kHz.
        let n_prb = match bandwidth_mhz {
            5 => 11,
            10 => 24,
            other => return Err(PhyError::UnsupportedBandwidth(other)),
        };
        Ok(Self { bandwidth_mhz, scs_khz: 30, n_prb })
    }
}

/// Validated channel quality indicator in 1..=15.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Cqi(u8);

impl Cqi {
    pub const MIN: Cqi = Cqi(1);
    pub const MAX: Cqi = Cqi(15);

    pub fn new(value: i64) -> Result<Self, PhyError> {
        if (1..=15).contains(&value) {
            Ok(Cqi(value as u8))
        } else {
            Err(PhyError::CqiOutOfRange(value))
        }
    }

    /// Rounds half-up and clamps into 1..=15.
    pub fn saturating_from_f64(value: f64) -> Self {
        let rounded = (value + 0.5).floor();
        Cqi(rounded.clamp(1.0, 15.0) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn spectral_efficiency(self) -> f64 {
        CQI_EFFICIENCY[usize::from(self.0) - 1]
    }

    /// MCS index derived from CQI: `min(2*cqi - 2, 27)`.
    pub fn mcs(self) -> u8 {
        (2 * self.0 - 2).min(MAX_MCS)
    }
}

impl TryFrom<i64> for Cqi {
    type Error = PhyError;
    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Cqi::new(value)
    }
}

impl From<Cqi> for u8 {
    fn from(c: Cqi) -> u8 {
        c.0
    }
}

/// Bytes carried by one uplink slot granted `n_prb` PRBs at `cqi`.
pub fn transport_block_bytes(cqi: Cqi, n_prb: u32) -> u32 {
    let bits = (DATA_RE_PER_PRB * cqi.spectral_efficiency() * f64::from(n_prb)).floor();
    (bits as u64 / 8) as u32
}

/// Straight-line UE motion relative to a gNB at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeKinematics {
    pub position: [f64; 2],
    pub speed_mps: f64,
    pub heading: [f64; 2],
}

impl UeKinematics {
    pub fn stationary(position: [f64; 2]) -> Self {
        Self { position, speed_mps: 0.0, heading: [1.0, 0.0] }
    }

    pub fn advance(&self, dt_ms: f64) -> Self {
        let d = self.speed_mps * dt_ms / 1000.0;
        Self {
            position: [self.position[0] + d * self.heading[0], self.position[1] + d * self.heading[1]],
            ..*self
        }
    }

    pub fn distance_m(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }
}

/// 1 mph in metres per second.
pub const MPH_TO_MPS: f64 = 0.44704;

/// How a UE's CQI evolves over an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum CqiTrace {
    Constant(Cqi),
    /// `(time_ms, cqi)` anchors, linearly interpolated, held flat past the ends.
    Ramp(Vec<(f64, f64)>),
    /// `(distance_m, cqi)` calibration, non-increasing in distance.
    PathLoss(Vec<(f64, f64)>),
}

impl CqiTrace {
    pub fn ramp(anchors: Vec<(f64, f64)>) -> Result<Self, PhyError> {
        check_anchors(&anchors, "time")?;
        Ok(CqiTrace::Ramp(anchors))
    }

    pub fn path_loss(calibration: Vec<(f64, f64)>) -> Result<Self, PhyError> {
        check_anchors(&calibration, "distance")?;
        if calibration.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(PhyError::NonMonotoneCalibration);
        }
        Ok(CqiTrace::PathLoss(calibration))
    }

    pub fn cqi_at(&self, time_ms: f64, distance_m: f64) -> Cqi {
        match self {
            CqiTrace::Constant(c) => *c,
            CqiTrace::Ramp(anchors) => Cqi::saturating_from_f64(interpolate(anchors, time_ms)),
            CqiTrace::PathLoss(cal) => Cqi::saturating_from_f64(interpolate(cal, distance_m)),
        }
    }
}

fn check_anchors(anchors: &[(f64, f64)], axis: &'static str) -> Result<(), PhyError> {
    if anchors.is_empty() {
        return Err(PhyError::EmptyTrace);
    }
    for &(_, c) in anchors {
        if !(1.0..=15.0).contains(&c) {
            return Err(PhyError::CqiOutOfRange(c.round() as i64));
        }
    }
    if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(PhyError::UnsortedAnchors(axis));
    }
    Ok(())
}

fn interpolate(anchors: &[(f64, f64)], x: f64) -> f64 {
    let first = anchors[0];
    let last = anchors[anchors.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = anchors.partition_point(|&(ax, _)| ax <= x);
    let (x0, y0) = anchors[i - 1];
    let (x1, y1) = anchors[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}
