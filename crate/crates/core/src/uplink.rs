//! Uplink data path: video frame generation, RLC UM drop-tail buffering,
//! MAC scheduling over uplink slots and per-frame latency accounting.
//!
//! All time values inside the stack are integer microseconds so that latency
//! arithmetic and the byte ledger stay exact.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{transport_block_bytes, Cqi};

/// Default RLC segment size in bytes.
pub const DEFAULT_SEGMENT_BYTES: u32 = 1500;
/// Default video frame size in bytes.
pub const DEFAULT_FRAME_BYTES: u32 = 7500;
/// PF throughput EMA smoothing per uplink slot.
pub const PF_ALPHA: f64 = 0.05;
/// PF throughput floor in bytes per slot.
pub const PF_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UplinkError {
    #[error("object speed must be positive, got {0} m/s")]
    NonPositiveSpeed(f64),
    #[error("field of view must be positive, got {0} m")]
    NonPositiveFov(f64),
    #[error("frame rate must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("uplink share must lie in (0, 1], got {0}")]
    InvalidUplinkShare(f64),
    #[error("latency budget must be positive, got {0} ms")]
    NonPositiveBudget(f64),
}

pub type UeId = usize;

/// Uplink latency target for one UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosRequirement {
    uplink_latency_budget_ms: f64,
}

impl QosRequirement {
    pub fn new(uplink_latency_budget_ms: f64) -> Result<Self, UplinkError> {
        if uplink_latency_budget_ms > 0.0 && uplink_latency_budget_ms.is_finite() {
            Ok(Self { uplink_latency_budget_ms })
        } else {
            Err(UplinkError::NonPositiveBudget(uplink_latency_budget_ms))
        }
    }

    pub fn budget_ms(&self) -> f64 {
        self.uplink_latency_budget_ms
    }
}

/// Result of turning scene geometry into a latency requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Characterization {
    pub dwell_ms: f64,
    pub frames_in_fov: u64,
    pub round_trip_budget_ms: f64,
    pub requirement: QosRequirement,
}

/// Derives the latency budget from how long an object stays in the camera's
/// field of view.
pub fn characterize_requirement(
    fov_m: f64,
    speed_mps: f64,
    fps: f64,
    uplink_share: f64,
) -> Result<Characterization, UplinkError> {
    if !(speed_mps > 0.0) {
        return Err(UplinkError::NonPositiveSpeed(speed_mps));
    }
    if !(fov_m > 0.0) {
        return Err(UplinkError::NonPositiveFov(fov_m));
    }
    if !(fps > 0.0) {
        return Err(UplinkError::NonPositiveFps(fps));
    }
    if !(uplink_share > 0.0 && uplink_share <= 1.0) {
        return Err(UplinkError::InvalidUplinkShare(uplink_share));
    }
    let dwell_ms = 1000.0 * fov_m / speed_mps;
    let frames_in_fov = (dwell_ms * fps / 1000.0).floor() as u64;
    Ok(Characterization {
        dwell_ms,
        frames_in_fov,
        round_trip_budget_ms: dwell_ms,
        requirement: QosRequirement::new(uplink_share * dwell_ms)?,
    })
}

/// Application traffic parameters of one UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppConfig {
    pub frame_bytes: u32,
    /// Frames per second; zero disables traffic.
    pub frame_rate_fps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoFrame {
    pub id: u64,
    pub size_bytes: u32,
    pub gen_time_us: u64,
}

/// Generation instant of the `n`-th frame on the global grid of `fps`.
fn grid_time_us(n: u64, fps: u32) -> u64 {
    n * 1_000_000 / u64::from(fps)
}

/// Frames whose generation instant lies in `[start_us, start_us + len_us)`.
///
/// Frames sit on the fixed grid `floor(n * 1e6 / fps)` microseconds so that
/// both supported rates align on every 100 ms boundary. Ids continue from
/// `next_id`, which is advanced.
pub fn generate_frames(app: &AppConfig, next_id: &mut u64, start_us: u64, len_us: u64) -> Vec<VideoFrame> {
    let fps = app.frame_rate_fps;
    if fps == 0 || len_us == 0 {
        return Vec::new();
    }
    let end_us = start_us + len_us;
    let mut n = start_us * u64::from(fps) / 1_000_000;
    while n > 0 && grid_time_us(n - 1, fps) >= start_us {
        n -= 1;
    }
    while grid_time_us(n, fps) < start_us {
        n += 1;
    }
    let mut frames = Vec::new();
    while grid_time_us(n, fps) < end_us {
        frames.push(VideoFrame { id: *next_id, size_bytes: app.frame_bytes, gen_time_us: grid_time_us(n, fps) });
        *next_id += 1;
        n += 1;
    }
    frames
}

/// Byte conservation counters for one UE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationLedger {
    pub generated_bytes: u64,
    pub delivered_bytes: u64,
    pub buffered_bytes: u64,
    pub dropped_bytes: u64,
}

impl ConservationLedger {
    pub fn is_balanced(&self) -> bool {
        self.generated_bytes == self.delivered_bytes + self.buffered_bytes + self.dropped_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    frame_id: u64,
    bytes: u32,
    gen_time_us: u64,
    /// Last admitted segment of its frame.
    closes_frame: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnqueueReport {
    pub admitted_segments: u32,
    pub dropped_segments: u32,
    pub admitted_bytes: u32,
    pub dropped_bytes: u32,
    pub frame_dropped: bool,
}

/// Bytes of one frame leaving the buffer in a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub frame_id: u64,
    pub bytes: u32,
    pub gen_time_us: u64,
    pub delivered_at_us: u64,
    /// The frame's final admitted byte left with this delivery.
    pub frame_complete: bool,
}

/// RLC unacknowledged-mode transmit buffer with drop-tail admission.
#[derive(Debug, Clone, PartialEq)]
pub struct RlcBuffer {
    capacity_bytes: u32,
    segments: VecDeque<Segment>,
    occupancy_bytes: u32,
    dropped_frame_ids: BTreeSet<u64>,
    ledger: ConservationLedger,
}

impl RlcBuffer {
    pub fn new(capacity_bytes: u32) -> Self {
        Self {
            capacity_bytes,
            segments: VecDeque::new(),
            occupancy_bytes: 0,
            dropped_frame_ids: BTreeSet::new(),
            ledger: ConservationLedger::default(),
        }
    }

    pub fn with_capacity_kb(kb: u32) -> Self {
        Self::new(kb * 1024)
    }

    pub fn capacity_bytes(&self) -> u32 {
        self.capacity_bytes
    }

    /// Changes capacity; queued segments are kept even when above the new limit.
    pub fn set_capacity_bytes(&mut self, capacity_bytes: u32) {
        self.capacity_bytes = capacity_bytes;
    }

    pub fn occupancy_bytes(&self) -> u32 {
        self.occupancy_bytes
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn ledger(&self) -> &ConservationLedger {
        &self.ledger
    }

    pub fn is_dropped(&self, frame_id: u64) -> bool {
        self.dropped_frame_ids.contains(&frame_id)
    }

    /// Generation time of the oldest queued byte.
    pub fn head_gen_time_us(&self) -> Option<u64> {
        self.segments.front().map(|s| s.gen_time_us)
    }

    /// Segments the frame and admits segments in order while they fit; the
    /// first misfit and everything after it are dropped.
    pub fn enqueue(&mut self, frame: &VideoFrame, segment_bytes: u32) -> EnqueueReport {
        assert!(segment_bytes > 0, "segment size must be positive");
        let mut report = EnqueueReport::default();
        if frame.size_bytes == 0 {
            return report;
        }
        self.ledger.generated_bytes += u64::from(frame.size_bytes);
        let mut remaining = frame.size_bytes;
        let mut last_admitted = None;
        while remaining > 0 {
            let seg = remaining.min(segment_bytes);
            remaining -= seg;
            if report.dropped_segments == 0 && self.occupancy_bytes + seg <= self.capacity_bytes {
                self.segments.push_back(Segment {
                    frame_id: frame.id,
                    bytes: seg,
                    gen_time_us: frame.gen_time_us,
                    closes_frame: false,
                });
                last_admitted = Some(self.segments.len() - 1);
                self.occupancy_bytes += seg;
                report.admitted_segments += 1;
                report.admitted_bytes += seg;
            } else {
                report.dropped_segments += 1;
                report.dropped_bytes += seg;
            }
        }
        if let Some(i) = last_admitted {
            self.segments[i].closes_frame = true;
        }
        if report.dropped_segments > 0 {
            report.frame_dropped = true;
            self.dropped_frame_ids.insert(frame.id);
        }
        self.ledger.buffered_bytes += u64::from(report.admitted_bytes);
        self.ledger.dropped_bytes += u64::from(report.dropped_bytes);
        report
    }

    /// Dequeues up to `tb_bytes` in FIFO order, splitting the head segment
    /// when needed. Deliveries are stamped with `slot_end_us`.
    pub fn transmit(&mut self, tb_bytes: u32, slot_end_us: u64) -> Vec<Delivery> {
        let mut budget = tb_bytes.min(self.occupancy_bytes);
        let mut out = Vec::new();
        while budget > 0 {
            let head = self.segments.front_mut().expect("occupancy implies a queued segment");
            let take = head.bytes.min(budget);
            head.bytes -= take;
            budget -= take;
            let drained = head.bytes == 0;
            let delivery = Delivery {
                frame_id: head.frame_id,
                bytes: take,
                gen_time_us: head.gen_time_us,
                delivered_at_us: slot_end_us,
                frame_complete: drained && head.closes_frame && !self.dropped_frame_ids.contains(&head.frame_id),
            };
            if drained {
                let frame_id = head.frame_id;
                let closes = head.closes_frame;
                self.segments.pop_front();
                if closes {
                    self.dropped_frame_ids.remove(&frame_id);
                }
            }
            self.occupancy_bytes -= take;
            self.ledger.buffered_bytes -= u64::from(take);
            self.ledger.delivered_bytes += u64::from(take);
            out.push(delivery);
        }
        out
    }
}

/// Where a frame stands in the uplink pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Delivered { last_byte_at_us: u64 },
    Dropped,
    Pending,
}

/// Latency outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameLatency {
    Delivered(f64),
    Dropped,
    Pending { age_ms: f64 },
}

pub fn account_frame_latency(frame: &VideoFrame, status: FrameStatus, now_us: u64) -> FrameLatency {
    match status {
        FrameStatus::Delivered { last_byte_at_us } => {
            FrameLatency::Delivered(us_to_ms(last_byte_at_us - frame.gen_time_us))
        }
        FrameStatus::Dropped => FrameLatency::Dropped,
        FrameStatus::Pending => FrameLatency::Pending { age_ms: us_to_ms(now_us.saturating_sub(frame.gen_time_us)) },
    }
}

pub fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Cell-wide MAC scheduler choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MacScheduler {
    RoundRobin,
    ProportionalFair,
}

impl MacScheduler {
    pub fn short_name(self) -> &'static str {
        match self {
            MacScheduler::RoundRobin => "RR",
            MacScheduler::ProportionalFair => "PF",
        }
    }
}

/// PRBs granted to one UE in one uplink slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrbGrant {
    pub ue: UeId,
    pub prbs: u32,
}

/// Equal PRB split among backlogged UEs; the remainder goes one PRB each to
/// UEs in circular order from `pointer`, which then moves past the last
/// recipient. `backlogged` must be sorted by id; `n_ues` is the id space.
pub fn schedule_rr(backlogged: &[UeId], n_prb: u32, pointer: UeId, n_ues: usize) -> (Vec<PrbGrant>, UeId) {
    if backlogged.is_empty() {
        return (Vec::new(), pointer);
    }
    let m = backlogged.len() as u32;
    let base = n_prb / m;
    let remainder = (n_prb % m) as usize;
    let mut grants: Vec<PrbGrant> = backlogged.iter().map(|&ue| PrbGrant { ue, prbs: base }).collect();
    let start = backlogged.iter().position(|&ue| ue >= pointer).unwrap_or(0);
    let mut new_pointer = pointer;
    for k in 0..remainder {
        let idx = (start + k) % backlogged.len();
        grants[idx].prbs += 1;
        new_pointer = (backlogged[idx] + 1) % n_ues.max(1);
    }
    grants.retain(|g| g.prbs > 0);
    (grants, new_pointer)
}

/// Per-UE exponentially averaged served throughput for PF.
#[derive(Debug, Clone, PartialEq)]
pub struct PfState {
    ema: Vec<f64>,
    alpha: f64,
    floor: f64,
}

impl PfState {
    pub fn new(n_ues: usize) -> Self {
        Self::with_params(n_ues, PF_ALPHA, PF_EPSILON)
    }

    pub fn with_params(n_ues: usize, alpha: f64, floor: f64) -> Self {
        Self { ema: vec![floor; n_ues], alpha, floor }
    }

    pub fn ema(&self, ue: UeId) -> f64 {
        self.ema[ue]
    }

    pub fn set_ema(&mut self, ue: UeId, value: f64) {
        self.ema[ue] = value.max(self.floor);
    }

    /// One EMA step; `served[u]` is bytes delivered to UE `u` in the slot.
    pub fn update(&mut self, served: &[u64]) {
        for (e, &s) in self.ema.iter_mut().zip(served) {
            *e = ((1.0 - self.alpha) * *e + self.alpha * s as f64).max(self.floor);
        }
    }
}

/// Grants every PRB to the backlogged UE with the highest
/// achievable-rate over average-throughput ratio, lowest id on ties.
pub fn schedule_pf(backlogged: &[UeId], cqi: &[Cqi], pf: &PfState, n_prb: u32) -> Vec<PrbGrant> {
    let mut best: Option<(UeId, f64)> = None;
    for &ue in backlogged {
        let metric = f64::from(transport_block_bytes(cqi[ue], n_prb)) / pf.ema(ue).max(pf.floor);
        match best {
            Some((_, m)) if metric <= m => {}
            _ => best = Some((ue, metric)),
        }
    }
    best.map(|(ue, _)| vec![PrbGrant { ue, prbs: n_prb }]).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(id: u64, size: u32, gen: u64) -> VideoFrame {
        VideoFrame { id, size_bytes: size, gen_time_us: gen }
    }

    #[test]
    fn characterization_examples() {
        let c = characterize_requirement(22.0, 20.0, 30.0, 1.0).unwrap();
        assert_eq!(c.frames_in_fov, 33);
        assert!((c.dwell_ms - 1100.0).abs() < 0.1);
        assert_eq!(c.requirement.budget_ms(), c.dwell_ms);

        let c = characterize_requirement(20.0, 26.8224, 60.0, 0.5).unwrap();
        assert!((c.dwell_ms - 745.6).abs() < 0.05);
        assert_eq!(c.frames_in_fov, 44);
        assert!((c.requirement.budget_ms() - c.dwell_ms / 2.0).abs() < 1e-12);

        assert_eq!(characterize_requirement(22.0, 0.0, 30.0, 1.0), Err(UplinkError::NonPositiveSpeed(0.0)));
        assert!(characterize_requirement(22.0, 20.0, 30.0, 1.5).is_err());
    }

    #[test]
    fn frames_per_window() {
        let mut id = 0;
        let app60 = AppConfig { frame_bytes: 7500, frame_rate_fps: 60 };
        let f = generate_frames(&app60, &mut id, 0, 100_000);
        assert_eq!(f.len(), 6);
        assert!(f.iter().all(|f| f.size_bytes == 7500));
        assert_eq!(id, 6);

        let app30 = AppConfig { frame_bytes: 7500, frame_rate_fps: 30 };
        let f = generate_frames(&app30, &mut id, 100_000, 100_000);
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].gen_time_us, 100_000);
        assert_eq!(f[0].id, 6);
        assert_eq!(f[1].gen_time_us, 133_333);

        assert!(generate_frames(&app30, &mut id, 5_000, 0).is_empty());
        let idle = AppConfig { frame_bytes: 7500, frame_rate_fps: 0 };
        assert!(generate_frames(&idle, &mut id, 0, 1_000_000).is_empty());
    }

    #[test]
    fn enqueue_drops_tail_of_oversized_frame() {
        let mut b = RlcBuffer::new(6144);
        let r = b.enqueue(&frame(0, 7500, 0), 1500);
        assert_eq!(r.admitted_segments, 4);
        assert_eq!(r.admitted_bytes, 6000);
        assert_eq!(r.dropped_segments, 1);
        assert!(r.frame_dropped && b.is_dropped(0));
        assert_eq!(b.occupancy_bytes(), 6000);
        assert!(b.ledger().is_balanced());
        assert_eq!(b.ledger().dropped_bytes, 1500);

        let mut b = RlcBuffer::with_capacity_kb(10);
        let r = b.enqueue(&frame(0, 7500, 0), 1500);
        assert_eq!(r.admitted_segments, 5);
        assert!(!r.frame_dropped);

        let r = b.enqueue(&frame(1, 0, 0), 1500);
        assert_eq!(r, EnqueueReport::default());
        assert!(!b.is_dropped(1));
    }

    #[test]
    fn shrunk_buffer_keeps_queue_and_blocks_admission() {
        let mut b = RlcBuffer::with_capacity_kb(10);
        b.enqueue(&frame(0, 6000, 0), 1500);
        b.set_capacity_bytes(2048);
        assert_eq!(b.occupancy_bytes(), 6000);
        let r = b.enqueue(&frame(1, 1000, 10), 1500);
        assert!(r.frame_dropped);
        b.transmit(5000, 500);
        let r = b.enqueue(&frame(2, 1000, 20), 1500);
        assert!(!r.frame_dropped);
        assert!(b.ledger().is_balanced());
    }

    #[test]
    fn transmit_examples() {
        let mut b = RlcBuffer::with_capacity_kb(10);
        b.enqueue(&frame(0, 6000, 0), 1500);
        let d = b.transmit(1191, 7_500);
        assert_eq!(d.iter().map(|d| d.bytes).sum::<u32>(), 1191);
        assert_eq!(b.occupancy_bytes(), 4809);

        let mut b = RlcBuffer::with_capacity_kb(10);
        b.enqueue(&frame(0, 500, 0), 1500);
        let d = b.transmit(1191, 500);
        assert_eq!(d.len(), 1);
        assert!(d[0].frame_complete);
        assert!(b.is_empty());

        let before = b.clone();
        assert!(b.transmit(0, 1000).is_empty());
        assert_eq!(b, before);
    }

    #[test]
    fn dropped_frame_never_completes() {
        let mut b = RlcBuffer::new(6144);
        b.enqueue(&frame(0, 7500, 0), 1500);
        let d = b.transmit(10_000, 500);
        assert!(d.iter().all(|d| !d.frame_complete));
        assert!(b.is_empty());
    }

    #[test]
    fn latency_examples() {
        let f = frame(0, 7500, 0);
        assert_eq!(
            account_frame_latency(&f, FrameStatus::Delivered { last_byte_at_us: 7_500 }, 9_000),
            FrameLatency::Delivered(7.5)
        );
        assert_eq!(account_frame_latency(&f, FrameStatus::Dropped, 9_000), FrameLatency::Dropped);
        let f = frame(1, 7500, 10_000);
        assert_eq!(account_frame_latency(&f, FrameStatus::Pending, 50_000), FrameLatency::Pending { age_ms: 40.0 });
    }

    #[test]
    fn rr_examples() {
        let (g, p) = schedule_rr(&[0, 1], 11, 0, 2);
        assert_eq!(g, vec![PrbGrant { ue: 0, prbs: 6 }, PrbGrant { ue: 1, prbs: 5 }]);
        assert_eq!(p, 1);

        let (g, _) = schedule_rr(&[0], 11, 0, 1);
        assert_eq!(g, vec![PrbGrant { ue: 0, prbs: 11 }]);

        let (g, p) = schedule_rr(&[0, 1, 2], 24, 2, 3);
        assert!(g.iter().all(|g| g.prbs == 8));
        assert_eq!(p, 2);

        let (g, p) = schedule_rr(&[], 24, 1, 3);
        assert!(g.is_empty());
        assert_eq!(p, 1);
    }

    #[test]
    fn rr_fairness_over_many_slots() {
        for m in 1..=4usize {
            let ues: Vec<UeId> = (0..m).collect();
            let mut totals = vec![0u32; m];
            let mut ptr = 0;
            for _ in 0..10 * m {
                let (g, p) = schedule_rr(&ues, 11, ptr, m);
                ptr = p;
                for g in g {
                    totals[g.ue] += g.prbs;
                }
            }
            let spread = totals.iter().max().unwrap() - totals.iter().min().unwrap();
            assert!(spread as usize <= m.saturating_sub(1).max(0), "m={m} totals={totals:?}");
        }
    }

    #[test]
    fn pf_examples() {
        let cqi = [Cqi::new(15).unwrap(), Cqi::new(8).unwrap()];
        let pf = PfState::new(2);
        assert_eq!(schedule_pf(&[0, 1], &cqi, &pf, 11), vec![PrbGrant { ue: 0, prbs: 11 }]);
        assert_eq!(schedule_pf(&[1], &cqi, &pf, 11), vec![PrbGrant { ue: 1, prbs: 11 }]);

        let same = [Cqi::new(10).unwrap(); 2];
        assert_eq!(schedule_pf(&[0, 1], &same, &pf, 11)[0].ue, 0);
        assert!(schedule_pf(&[], &same, &pf, 11).is_empty());
    }

    #[test]
    fn pf_alternates_between_identical_ues() {
        let same = [Cqi::new(10).unwrap(); 2];
        let mut pf = PfState::new(2);
        let tb = u64::from(transport_block_bytes(same[0], 11));
        let mut served_by = Vec::new();
        for _ in 0..6 {
            let g = schedule_pf(&[0, 1], &same, &pf, 11);
            let mut served = [0u64; 2];
            served[g[0].ue] = tb;
            served_by.push(g[0].ue);
            pf.update(&served);
        }
        assert_eq!(served_by, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn pf_ema_respects_floor() {
        let mut pf = PfState::new(1);
        for _ in 0..1000 {
            pf.update(&[0]);
        }
        assert_eq!(pf.ema(0), PF_EPSILON);
    }

    proptest! {
        #[test]
        fn buffer_invariants_hold(
            cap_kb in 1u32..=10,
            ops in proptest::collection::vec((any::<bool>(), 0u32..9000), 1..60)
        ) {
            let mut b = RlcBuffer::with_capacity_kb(cap_kb);
            let mut last_delivered = 0u64;
            let mut next = 0u64;
            for (i, (is_frame, amount)) in ops.into_iter().enumerate() {
                if is_frame {
                    b.enqueue(&frame(next, amount, i as u64), 1500);
                    next += 1;
                } else {
                    for d in b.transmit(amount, i as u64) {
                        prop_assert!(d.frame_id >= last_delivered);
                        last_delivered = d.frame_id;
                    }
                }
                prop_assert!(b.occupancy_bytes() <= b.capacity_bytes());
                prop_assert!(b.ledger().is_balanced());
                prop_assert_eq!(b.ledger().buffered_bytes, u64::from(b.occupancy_bytes()));
            }
        }
    }
}
