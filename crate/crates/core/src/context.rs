//! Per-UE context: 10 ms metric samples, 100 ms windows and the normalized
//! state vector handed to the agent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Metric sampling period.
pub const SAMPLE_PERIOD_MS: u64 = 10;
/// Aggregation window length.
pub const WINDOW_MS: u64 = 100;
pub const SAMPLES_PER_WINDOW: usize = (WINDOW_MS / SAMPLE_PERIOD_MS) as usize;
/// Recent samples carried in the state vector per UE.
pub const STATE_SAMPLES: usize = 9;
/// Slowly varying scalars per UE: L, g_x, g_y, p.
pub const STATE_SCALARS: usize = 4;
pub const STATE_DIM_PER_UE: usize = STATE_SCALARS + 4 * STATE_SAMPLES;

/// Normalization ranges for the state vector.
pub mod scale {
    pub const LATENCY_MS: f64 = 100.0;
    pub const POSITION_M: f64 = 10_000.0;
    pub const RLC_KB: f64 = 10.0;
    pub const TX_BYTES: f64 = 4096.0;
    pub const BSR_BYTES: f64 = 20_480.0;
    pub const CQI: f64 = 15.0;
    pub const MCS: f64 = 27.0;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("window needs exactly {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("state needs at least one UE window")]
    NoWindows,
    #[error("inconsistent window indices: {0} vs {1}")]
    InconsistentWindows(u64, u64),
}

/// One 10 ms observation of a UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    /// Sample instant; the sample covers `[t_ms - 10, t_ms)`.
    pub t_ms: u64,
    /// Bytes delivered in the interval.
    pub tx_bytes: u64,
    /// Buffer status report: bytes awaiting transmission.
    pub bsr_bytes: u64,
    pub cqi: u8,
    pub mcs: u8,
}

/// Observed uplink latency of a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObservedLatency {
    Ms(f64),
    Dropped,
}

impl ObservedLatency {
    pub fn meets(&self, budget_ms: f64) -> bool {
        matches!(*self, ObservedLatency::Ms(l) if l <= budget_ms)
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            ObservedLatency::Ms(l) => l,
            ObservedLatency::Dropped => f64::INFINITY,
        }
    }
}

/// Raw window inputs gathered by the simulator for one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowObservation {
    pub index: u64,
    pub samples: Vec<MetricSample>,
    /// Latencies of frames whose last byte arrived inside the window.
    pub completed_latencies_ms: Vec<f64>,
    pub dropped_frames: u32,
    /// Age of the oldest queued byte at window end, if anything is queued.
    pub oldest_queued_age_ms: Option<f64>,
    pub previous: ObservedLatency,
    pub required_latency_ms: f64,
    pub position: [f64; 2],
    pub rlc_capacity_kb: f64,
}

/// One UE's aggregated 100 ms window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub index: u64,
    pub samples: Vec<MetricSample>,
    pub required_latency_ms: f64,
    pub observed_latency: ObservedLatency,
    pub dropped_frames: u32,
    pub position: [f64; 2],
    pub rlc_capacity_kb: f64,
}

impl WindowMetrics {
    pub fn tx_bytes(&self) -> u64 {
        self.samples.iter().map(|s| s.tx_bytes).sum()
    }

    pub fn last_sample(&self) -> &MetricSample {
        self.samples.last().expect("window always holds samples")
    }
}

pub fn build_window(obs: WindowObservation) -> Result<WindowMetrics, ContextError> {
    if obs.samples.len() != SAMPLES_PER_WINDOW {
        return Err(ContextError::SampleCount { expected: SAMPLES_PER_WINDOW, got: obs.samples.len() });
    }
    let observed = if obs.dropped_frames > 0 {
        ObservedLatency::Dropped
    } else if let Some(max) = obs.completed_latencies_ms.iter().copied().reduce(f64::max) {
        ObservedLatency::Ms(max)
    } else if let Some(age) = obs.oldest_queued_age_ms {
        ObservedLatency::Ms(age)
    } else {
        obs.previous
    };
    Ok(WindowMetrics {
        index: obs.index,
        samples: obs.samples,
        required_latency_ms: obs.required_latency_ms,
        observed_latency: observed,
        dropped_frames: obs.dropped_frames,
        position: obs.position,
        rlc_capacity_kb: obs.rlc_capacity_kb,
    })
}

fn norm(value: f64, range: f64) -> f64 {
    (value / range).clamp(0.0, 1.0)
}

/// Flattens one window per UE (in UE id order) into a `40 * K` vector in `[0, 1]`.
pub fn assemble_state(windows: &[WindowMetrics]) -> Result<Vec<f64>, ContextError> {
    let first = windows.first().ok_or(ContextError::NoWindows)?;
    let mut state = Vec::with_capacity(STATE_DIM_PER_UE * windows.len());
    for w in windows {
        if w.index != first.index {
            return Err(ContextError::InconsistentWindows(first.index, w.index));
        }
        if w.samples.len() < STATE_SAMPLES {
            return Err(ContextError::SampleCount { expected: SAMPLES_PER_WINDOW, got: w.samples.len() });
        }
        state.push(norm(w.required_latency_ms, scale::LATENCY_MS));
        state.push(norm(w.position[0], scale::POSITION_M));
        state.push(norm(w.position[1], scale::POSITION_M));
        state.push(norm(w.rlc_capacity_kb, scale::RLC_KB));
        for s in &w.samples[w.samples.len() - STATE_SAMPLES..] {
            state.push(norm(s.tx_bytes as f64, scale::TX_BYTES));
            state.push(norm(s.bsr_bytes as f64, scale::BSR_BYTES));
            state.push(norm(f64::from(s.cqi), scale::CQI));
            state.push(norm(f64::from(s.mcs), scale::MCS));
        }
    }
    Ok(state)
}
