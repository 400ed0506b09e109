//! Slot-level uplink simulator and the drivers built on it: episodes,
//! DQN training, fixed baselines and exhaustive oracles.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codebook::{ActionTuple, Codebook, CodebookError, UeAction};
use crate::context::{
    assemble_state, build_window, ContextError, MetricSample, ObservedLatency, WindowMetrics, WindowObservation,
    SAMPLE_PERIOD_MS, WINDOW_MS,
};
use crate::dqn::{mean_reward, reward, Checkpoint, CheckpointError, DqnAgent, QNetwork, Transition};
use crate::phy::{transport_block_bytes, Cqi, TddConfig, SLOT_US};
use crate::scenario::Scenario;
use crate::uplink::{
    generate_frames, schedule_pf, schedule_rr, us_to_ms, AppConfig, ConservationLedger, MacScheduler, PfState,
    RlcBuffer, UeId,
};

pub const SLOTS_PER_SAMPLE: u64 = SAMPLE_PERIOD_MS * 1000 / SLOT_US;
pub const SLOTS_PER_WINDOW: u64 = WINDOW_MS * 1000 / SLOT_US;
/// Minimum compliance for an action to count as feasible in the sweep.
pub const FEASIBLE_COMPLIANCE: f64 = 0.95;
/// Largest UE count swept exhaustively without `force`.
pub const MAX_SWEEP_UES: usize = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown baseline profile {0}; expected 1..=4")]
    UnknownProfile(u8),
    #[error("unknown PHY configuration `{0}`; expected A, B, C or D")]
    UnknownPhy(String),
    #[error("exhaustive sweep of {size} actions for {n_ues} UEs refused; force it explicitly")]
    SweepTooLarge { n_ues: usize, size: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
struct UeState {
    buffer: RlcBuffer,
    app: AppConfig,
    rlc_kb: u32,
    next_frame_id: u64,
    completed_ms: Vec<f64>,
    dropped_frames: u32,
    samples: Vec<MetricSample>,
    interval_tx: u64,
    previous: ObservedLatency,
}

/// Cell-wide settings waiting for a TDD period boundary.
#[derive(Debug, Clone, Copy)]
struct PendingPhy {
    from_slot: u64,
    tdd: TddConfig,
}

/// One cell with its UEs, advanced slot by slot.
///
/// In slot `s` frames generated in `(s_start - 500 us, s_start]` are
/// enqueued, then on uplink slots the scheduler grants PRBs and buffers are
/// drained with the CQI in force at slot start. Deliveries are stamped with
/// the slot end.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    scenario: &'a Scenario,
    codebook: Codebook,
    slot: u64,
    window: u64,
    tdd: TddConfig,
    pending_phy: Option<PendingPhy>,
    mac: MacScheduler,
    action_index: usize,
    action: ActionTuple,
    rr_pointer: UeId,
    pf: PfState,
    ues: Vec<UeState>,
}

impl<'a> Environment<'a> {
    pub fn new(scenario: &'a Scenario, initial_action: usize) -> Result<Self, SimError> {
        let codebook = Codebook::new(scenario.n_ues())?;
        let action = codebook.decode(initial_action)?;
        let ues = scenario
            .ues
            .iter()
            .zip(&action.ues)
            .map(|(spec, ua)| UeState {
                buffer: RlcBuffer::with_capacity_kb(ua.rlc_kb),
                app: AppConfig { frame_bytes: spec.frame_bytes, frame_rate_fps: scenario.fps_override.unwrap_or(ua.fps) },
                rlc_kb: ua.rlc_kb,
                next_frame_id: 0,
                completed_ms: Vec::new(),
                dropped_frames: 0,
                samples: Vec::new(),
                interval_tx: 0,
                previous: ObservedLatency::Ms(0.0),
            })
            .collect();
        Ok(Self {
            scenario,
            codebook,
            slot: 0,
            window: 0,
            tdd: action.phy,
            pending_phy: None,
            mac: action.mac,
            action_index: initial_action,
            action,
            rr_pointer: 0,
            pf: PfState::new(scenario.n_ues()),
            ues,
        })
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn codebook(&self) -> Codebook {
        self.codebook
    }

    /// Index of the next slot to run.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn now_us(&self) -> u64 {
        self.slot * SLOT_US
    }

    pub fn tdd(&self) -> TddConfig {
        self.tdd
    }

    pub fn mac(&self) -> MacScheduler {
        self.mac
    }

    pub fn action_index(&self) -> usize {
        self.action_index
    }

    pub fn action(&self) -> &ActionTuple {
        &self.action
    }

    pub fn frame_rate(&self, ue: UeId) -> u32 {
        self.ues[ue].app.frame_rate_fps
    }

    pub fn rlc_capacity_bytes(&self, ue: UeId) -> u32 {
        self.ues[ue].buffer.capacity_bytes()
    }

    pub fn ledger(&self, ue: UeId) -> ConservationLedger {
        *self.ues[ue].buffer.ledger()
    }

    pub fn occupancy_bytes(&self, ue: UeId) -> u32 {
        self.ues[ue].buffer.occupancy_bytes()
    }

    /// Applies a codebook entry. RLC capacity, frame rate and scheduler take
    /// effect immediately; the TDD split waits for the next period boundary.
    pub fn apply_action(&mut self, index: usize) -> Result<(), SimError> {
        let action = self.codebook.decode(index)?;
        for (ue, ua) in self.ues.iter_mut().zip(&action.ues) {
            ue.rlc_kb = ua.rlc_kb;
            ue.buffer.set_capacity_bytes(ua.rlc_kb * 1024);
            ue.app.frame_rate_fps = self.scenario.fps_override.unwrap_or(ua.fps);
        }
        self.mac = action.mac;
        let period = u64::from(TddConfig::slots_per_period());
        let from_slot = self.slot.div_ceil(period) * period;
        if from_slot == self.slot {
            self.tdd = action.phy;
            self.pending_phy = None;
        } else {
            self.pending_phy = Some(PendingPhy { from_slot, tdd: action.phy });
        }
        self.action_index = index;
        self.action = action;
        Ok(())
    }

    /// Runs one 0.5 ms slot.
    pub fn step_slot(&mut self) {
        if let Some(p) = self.pending_phy {
            if p.from_slot <= self.slot {
                self.tdd = p.tdd;
                self.pending_phy = None;
            }
        }
        let start_us = self.slot * SLOT_US;
        let end_us = start_us + SLOT_US;
        let arrivals_from = start_us.saturating_sub(SLOT_US - 1);
        let segment = self.scenario.segment_bytes;
        for ue in &mut self.ues {
            let frames = generate_frames(&ue.app, &mut ue.next_frame_id, arrivals_from, start_us + 1 - arrivals_from);
            for f in &frames {
                if ue.buffer.enqueue(f, segment).frame_dropped {
                    ue.dropped_frames += 1;
                }
            }
        }

        if self.tdd.is_uplink_slot(self.slot) {
            let t_ms = us_to_ms(start_us);
            let n_prb = self.scenario.carrier.n_prb;
            let cqi: Vec<Cqi> = self.scenario.ues.iter().map(|u| u.cqi_at(t_ms)).collect();
            let backlogged: Vec<UeId> = (0..self.ues.len()).filter(|&i| !self.ues[i].buffer.is_empty()).collect();
            let grants = match self.mac {
                MacScheduler::RoundRobin => {
                    let (g, p) = schedule_rr(&backlogged, n_prb, self.rr_pointer, self.ues.len());
                    self.rr_pointer = p;
                    g
                }
                MacScheduler::ProportionalFair => schedule_pf(&backlogged, &cqi, &self.pf, n_prb),
            };
            let mut served = vec![0u64; self.ues.len()];
            for g in grants {
                let ue = &mut self.ues[g.ue];
                for d in ue.buffer.transmit(transport_block_bytes(cqi[g.ue], g.prbs), end_us) {
                    served[g.ue] += u64::from(d.bytes);
                    if d.frame_complete {
                        ue.completed_ms.push(us_to_ms(d.delivered_at_us - d.gen_time_us));
                    }
                }
            }
            self.pf.update(&served);
            for (ue, s) in self.ues.iter_mut().zip(&served) {
                ue.interval_tx += s;
            }
        }

        self.slot += 1;
        if self.slot % SLOTS_PER_SAMPLE == 0 {
            let t_ms = end_us / 1000;
            for (ue, spec) in self.ues.iter_mut().zip(&self.scenario.ues) {
                let cqi = spec.cqi_at(t_ms as f64);
                ue.samples.push(MetricSample {
                    t_ms,
                    tx_bytes: std::mem::take(&mut ue.interval_tx),
                    bsr_bytes: u64::from(ue.buffer.occupancy_bytes()),
                    cqi: cqi.get(),
                    mcs: cqi.mcs(),
                });
            }
        }
    }

    /// Runs to the next window boundary and aggregates each UE's window.
    pub fn run_window(&mut self) -> Result<Vec<WindowMetrics>, SimError> {
        loop {
            self.step_slot();
            if self.slot % SLOTS_PER_WINDOW == 0 {
                break;
            }
        }
        let now_us = self.now_us();
        let mut out = Vec::with_capacity(self.ues.len());
        for (ue, spec) in self.ues.iter_mut().zip(&self.scenario.ues) {
            let w = build_window(WindowObservation {
                index: self.window,
                samples: std::mem::take(&mut ue.samples),
                completed_latencies_ms: std::mem::take(&mut ue.completed_ms),
                dropped_frames: std::mem::take(&mut ue.dropped_frames),
                oldest_queued_age_ms: ue.buffer.head_gen_time_us().map(|g| us_to_ms(now_us - g)),
                previous: ue.previous,
                required_latency_ms: spec.qos.budget_ms(),
                position: spec.position_at(us_to_ms(now_us)),
                rlc_capacity_kb: f64::from(ue.rlc_kb),
            })?;
            ue.previous = w.observed_latency;
            out.push(w);
        }
        self.window += 1;
        Ok(out)
    }

    /// Applies `action`, runs one window and scores it.
    pub fn step(&mut self, action: usize) -> Result<StepRecord, SimError> {
        self.apply_action(action)?;
        let windows = self.run_window()?;
        let beta = self.scenario.training.reward_beta;
        let ues: Vec<UeStep> = windows
            .into_iter()
            .zip(&self.ues)
            .map(|(metrics, ue)| UeStep {
                reward: reward(metrics.observed_latency, metrics.required_latency_ms, beta),
                rlc_kb: ue.rlc_kb,
                fps: ue.app.frame_rate_fps,
                metrics,
            })
            .collect();
        let per_ue: Vec<f64> = ues.iter().map(|u| u.reward).collect();
        Ok(StepRecord {
            window: self.window - 1,
            action_index: self.action_index,
            phy: self.tdd,
            mac: self.mac,
            reward: mean_reward(&per_ue),
            ues,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeStep {
    pub metrics: WindowMetrics,
    pub rlc_kb: u32,
    pub fps: u32,
    pub reward: f64,
}

/// Outcome of one decision step (one 100 ms window).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub window: u64,
    pub action_index: usize,
    pub phy: TddConfig,
    pub mac: MacScheduler,
    pub ues: Vec<UeStep>,
    /// Mean of the per-UE rewards.
    pub reward: f64,
}

impl StepRecord {
    pub fn windows(&self) -> Vec<WindowMetrics> {
        self.ues.iter().map(|u| u.metrics.clone()).collect()
    }

    pub fn state(&self) -> Result<Vec<f64>, SimError> {
        let ws: Vec<WindowMetrics> = self.ues.iter().map(|u| u.metrics.clone()).collect();
        Ok(assemble_state(&ws)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Configuration in force during the warm-up window.
    pub initial_action: usize,
    pub steps: Vec<StepRecord>,
}

impl EpisodeResult {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Fraction of (step, UE) pairs whose observed latency met the target.
    pub fn compliance(&self) -> f64 {
        let (met, n) = self.steps.iter().flat_map(|s| &s.ues).fold((0usize, 0usize), |(m, n), u| {
            (m + usize::from(u.metrics.observed_latency.meets(u.metrics.required_latency_ms)), n + 1)
        });
        if n == 0 {
            0.0
        } else {
            met as f64 / n as f64
        }
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action_index).collect()
    }

    /// Most frequent action over the last `n` steps, lowest index on ties.
    pub fn modal_action(&self, n: usize) -> Option<usize> {
        let tail = &self.steps[self.steps.len().saturating_sub(n)..];
        let mut counts = std::collections::BTreeMap::new();
        for s in tail {
            *counts.entry(s.action_index).or_insert(0usize) += 1;
        }
        let mut best: Option<(usize, usize)> = None;
        for (a, c) in counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((a, c));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// Chooses the next action from the current state.
pub trait Policy {
    fn choose(&mut self, state: &[f64], env: &Environment<'_>) -> Result<usize, SimError>;
}

/// Always the same codebook entry.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub usize);

impl Policy for FixedPolicy {
    fn choose(&mut self, _: &[f64], _: &Environment<'_>) -> Result<usize, SimError> {
        Ok(self.0)
    }
}

/// Argmax of a Q-network in evaluation mode.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'n>(pub &'n QNetwork);

impl Policy for GreedyPolicy<'_> {
    fn choose(&mut self, state: &[f64], _: &Environment<'_>) -> Result<usize, SimError> {
        let q = self.0.forward_eval(state).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(crate::dqn::greedy_index(&q))
    }
}

/// Look-ahead oracle: tries every action on a copy of the environment and
/// keeps the best-scoring one for the coming window.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowOraclePolicy;

impl Policy for WindowOraclePolicy {
    fn choose(&mut self, _: &[f64], env: &Environment<'_>) -> Result<usize, SimError> {
        let cb = env.codebook();
        let mut best: Option<(f64, ResourceKey, usize)> = None;
        for a in 0..cb.size() {
            let mut probe = env.clone();
            let r = probe.step(a)?.reward;
            let key = resource_key(&cb.decode(a)?, a);
            let better = match best {
                None => true,
                Some((br, bk, _)) => r > br || (r == br && key < bk),
            };
            if better {
                best = Some((r, key, a));
            }
        }
        Ok(best.expect("codebook is non-empty").2)
    }
}

/// Initial configuration drawn for an episode seeded with `seed`.
pub fn initial_action(seed: u64, codebook_size: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng.gen_range(0..codebook_size)
}

/// Runs a warm-up window under `initial`, then the scenario's episode steps
/// with actions from `policy`.
pub fn run_episode(scenario: &Scenario, initial: usize, policy: &mut dyn Policy) -> Result<EpisodeResult, SimError> {
    let mut env = Environment::new(scenario, initial)?;
    let mut state = assemble_state(&env.run_window()?)?;
    let mut steps = Vec::with_capacity(scenario.episode_steps());
    for _ in 0..scenario.episode_steps() {
        let a = policy.choose(&state, &env)?;
        let rec = env.step(a)?;
        state = rec.state()?;
        steps.push(rec);
    }
    Ok(EpisodeResult { initial_action: initial, steps })
}

pub fn run_fixed(scenario: &Scenario, action: usize) -> Result<EpisodeResult, SimError> {
    run_episode(scenario, action, &mut FixedPolicy(action))
}

/// Greedy rollout of a trained network from a seeded random start.
pub fn evaluate(scenario: &Scenario, net: &QNetwork, seed: u64) -> Result<EpisodeResult, SimError> {
    let cb = Codebook::new(scenario.n_ues())?;
    run_episode(scenario, initial_action(seed, cb.size()), &mut GreedyPolicy(net))
}

pub fn window_oracle(scenario: &Scenario, seed: u64) -> Result<EpisodeResult, SimError> {
    let cb = Codebook::new(scenario.n_ues())?;
    run_episode(scenario, initial_action(seed, cb.size()), &mut WindowOraclePolicy)
}

/// Ordering used to break ties toward cheaper configurations: fewer uplink
/// slots, then smaller total RLC, then lower total frame rate, then index.
pub type ResourceKey = (u8, u32, u32, usize);

pub fn resource_key(action: &ActionTuple, index: usize) -> ResourceKey {
    (action.phy.ul_slots(), action.total_rlc_kb(), action.total_fps(), index)
}

/// Fixed comparison configurations: `(fps, scheduler, rlc_kb)` per profile 1..=4.
pub const BASELINE_PROFILES: [(u32, MacScheduler, u32); 4] = [
    (30, MacScheduler::RoundRobin, 6),
    (60, MacScheduler::RoundRobin, 6),
    (60, MacScheduler::RoundRobin, 10),
    (60, MacScheduler::ProportionalFair, 6),
];

/// PHY configurations A..D as `(dl, ul)` slots.
pub const BASELINE_PHY: [(char, (u8, u8)); 4] = [('A', (7, 3)), ('B', (5, 5)), ('C', (3, 7)), ('D', (6, 4))];

pub fn baseline_action(codebook: &Codebook, profile: u8, phy: &str) -> Result<usize, SimError> {
    let &(fps, mac, rlc_kb) =
        BASELINE_PROFILES.get(usize::from(profile).wrapping_sub(1)).ok_or(SimError::UnknownProfile(profile))?;
    let letter = phy.trim().to_ascii_uppercase();
    let (dl, ul) = BASELINE_PHY
        .iter()
        .find(|(c, _)| letter.len() == 1 && letter.starts_with(*c))
        .map(|&(_, s)| s)
        .ok_or_else(|| SimError::UnknownPhy(phy.to_string()))?;
    let action = ActionTuple {
        phy: TddConfig::new(dl, ul).expect("baseline splits are valid"),
        mac,
        ues: vec![UeAction { rlc_kb, fps }; codebook.n_ues()],
    };
    Ok(codebook.encode(&action)?)
}

pub fn run_baseline(scenario: &Scenario, profile: u8, phy: &str) -> Result<EpisodeResult, SimError> {
    let cb = Codebook::new(scenario.n_ues())?;
    run_fixed(scenario, baseline_action(&cb, profile, phy)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub action_index: usize,
    pub total_reward: f64,
    pub compliance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub entries: Vec<SweepEntry>,
    /// Highest total reward, resource order on ties.
    pub best_reward: usize,
    /// Cheapest action with compliance at least [`FEASIBLE_COMPLIANCE`].
    pub best_feasible: Option<usize>,
    /// Highest compliance, resource order on ties; used when nothing is feasible.
    pub best_effort: usize,
}

impl OracleReport {
    pub fn entry(&self, action: usize) -> &SweepEntry {
        &self.entries[action]
    }

    pub fn feasible(&self) -> impl Iterator<Item = &SweepEntry> {
        self.entries.iter().filter(|e| e.compliance >= FEASIBLE_COMPLIANCE)
    }

    /// The sweep's recommended action: cheapest feasible, else best effort.
    pub fn recommended(&self) -> usize {
        self.best_feasible.unwrap_or(self.best_effort)
    }
}

/// Runs every codebook entry as a fixed policy for one episode.
pub fn oracle_sweep(scenario: &Scenario, force: bool) -> Result<OracleReport, SimError> {
    let cb = Codebook::new(scenario.n_ues())?;
    if scenario.n_ues() > MAX_SWEEP_UES && !force {
        return Err(SimError::SweepTooLarge { n_ues: scenario.n_ues(), size: cb.size() });
    }
    let mut entries = Vec::with_capacity(cb.size());
    for a in 0..cb.size() {
        let ep = run_fixed(scenario, a)?;
        entries.push(SweepEntry { action_index: a, total_reward: ep.total_reward(), compliance: ep.compliance() });
    }
    let keys: Vec<ResourceKey> = (0..cb.size()).map(|a| cb.decode(a).map(|t| resource_key(&t, a))).collect::<Result<_, _>>()?;
    let pick = |score: &dyn Fn(&SweepEntry) -> f64, filter: &dyn Fn(&SweepEntry) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for e in entries.iter().filter(|e| filter(e)) {
            let a = e.action_index;
            best = match best {
                Some(b) if score(&entries[b]) > score(e) => Some(b),
                Some(b) if score(&entries[b]) == score(e) && keys[b] < keys[a] => Some(b),
                _ => Some(a),
            };
        }
        best
    };
    let best_reward = pick(&|e| e.total_reward, &|_| true).expect("codebook is non-empty");
    let best_effort = pick(&|e| e.compliance, &|_| true).expect("codebook is non-empty");
    let best_feasible = pick(&|_| 0.0, &|e| e.compliance >= FEASIBLE_COMPLIANCE);
    Ok(OracleReport { entries, best_reward, best_feasible, best_effort })
}

/// Per-episode training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub compliance: f64,
    /// Mean TD loss over the episode's gradient steps; `None` before the
    /// replay memory first fills a batch.
    pub mean_loss: Option<f64>,
    /// Exploration rate at episode end.
    pub epsilon: f64,
}

/// Episode-by-episode DQN training on one scenario.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    scenario: &'a Scenario,
    codebook: Codebook,
    pub agent: DqnAgent,
    init_rng: ChaCha8Rng,
    episodes_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Result<Self, SimError> {
        scenario.training.validate().map_err(SimError::Config)?;
        let codebook = Codebook::new(scenario.n_ues())?;
        let state_dim = crate::context::STATE_DIM_PER_UE * scenario.n_ues();
        let agent = DqnAgent::new(state_dim, codebook.size(), scenario.training.clone(), seed);
        Ok(Self::with_agent(scenario, codebook, agent, seed))
    }

    /// Resumes from a checkpoint; optimizer state and step counter carry over.
    pub fn resume(scenario: &'a Scenario, checkpoint: Checkpoint, seed: u64) -> Result<Self, SimError> {
        scenario.training.validate().map_err(SimError::Config)?;
        let codebook = Codebook::new(scenario.n_ues())?;
        if checkpoint.n_ues as usize != scenario.n_ues() || checkpoint.codebook_size as usize != codebook.size() {
            return Err(CheckpointError::Mismatch {
                field: "input dimension",
                expected: (scenario.n_ues() * crate::context::STATE_DIM_PER_UE) as u64,
                found: checkpoint.online.input_dim() as u64,
            }
            .into());
        }
        let agent = checkpoint.into_agent(scenario.training.clone(), seed);
        Ok(Self::with_agent(scenario, codebook, agent, seed))
    }

    fn with_agent(scenario: &'a Scenario, codebook: Codebook, agent: DqnAgent, seed: u64) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(2);
        Self { scenario, codebook, agent, init_rng, episodes_done: 0 }
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_agent(&self.agent, self.scenario.n_ues())
    }

    /// One epsilon-greedy episode with a gradient step and soft target
    /// update after every transition once the replay memory holds a batch.
    pub fn run_episode(&mut self) -> Result<(EpisodeLog, EpisodeResult), SimError> {
        let initial = self.init_rng.gen_range(0..self.codebook.size());
        let mut env = Environment::new(self.scenario, initial)?;
        let mut state = assemble_state(&env.run_window()?)?;
        let n_steps = self.scenario.episode_steps();
        let mut steps = Vec::with_capacity(n_steps);
        let mut losses = Vec::new();
        for t in 0..n_steps {
            let action = self.agent.act(&state);
            let rec = env.step(action)?;
            let next_state = rec.state()?;
            self.agent.remember(Transition {
                state: std::mem::replace(&mut state, next_state.clone()),
                action,
                next_state,
                reward: rec.reward,
                terminal: t + 1 == n_steps,
            });
            if let Some(loss) = self.agent.optimize() {
                losses.push(loss);
                self.agent.soft_update();
            }
            steps.push(rec);
        }
        let result = EpisodeResult { initial_action: initial, steps };
        let log = EpisodeLog {
            episode: self.episodes_done,
            total_reward: result.total_reward(),
            compliance: result.compliance(),
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            epsilon: self.agent.epsilon(),
        };
        self.episodes_done += 1;
        Ok((log, result))
    }
}

/// Trains for `scenario.training.episodes` episodes. With a checkpoint
/// directory, writes `checkpoint_epNNNN.bin` every `checkpoint_every`
/// episodes and `checkpoint.bin` at the end. `observe` sees every episode.
pub fn train<F>(scenario: &Scenario, seed: u64, checkpoint_dir: Option<&Path>, mut observe: F) -> Result<DqnAgent, SimError>
where
    F: FnMut(&EpisodeLog, &EpisodeResult) -> Result<(), SimError>,
{
    let mut trainer = Trainer::new(scenario, seed)?;
    let every = scenario.training.checkpoint_every;
    for _ in 0..scenario.training.episodes {
        let (log, result) = trainer.run_episode()?;
        observe(&log, &result)?;
        if let Some(dir) = checkpoint_dir {
            if every > 0 && trainer.episodes_done() % every == 0 {
                trainer.checkpoint().save(&dir.join(format!("checkpoint_ep{:04}.bin", trainer.episodes_done())))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        trainer.checkpoint().save(&dir.join("checkpoint.bin"))?;
    }
    Ok(trainer.agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ObservedLatency;

    fn a1(latency: f64) -> Scenario {
        Scenario::preset("a1_30ms").unwrap().with_required_latency(latency).unwrap()
    }

    fn index(cb: &Codebook, phy: (u8, u8), mac: MacScheduler, rlc_kb: u32, fps: u32) -> usize {
        cb.encode(&ActionTuple {
            phy: TddConfig::new(phy.0, phy.1).unwrap(),
            mac,
            ues: vec![UeAction { rlc_kb, fps }; cb.n_ues()],
        })
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(SLOTS_PER_SAMPLE, 20);
        assert_eq!(SLOTS_PER_WINDOW, 200);
    }

    #[test]
    fn single_frame_latency_on_7_3() {
        // 585 B per uplink slot: a 7500 B frame needs 13 uplink slots, the
        // 13th being slot 47 which ends at 24 ms.
        let s = a1(30.0);
        let cb = Codebook::new(1).unwrap();
        let a = index(&cb, (7, 3), MacScheduler::RoundRobin, 8, 30);
        let mut env = Environment::new(&s, a).unwrap();
        let w = env.run_window().unwrap();
        assert_eq!(w[0].observed_latency, ObservedLatency::Ms(24.0));
        assert_eq!(w[0].samples.len(), 10);
        assert_eq!(w[0].tx_bytes(), 3 * 7500);
    }

    #[test]
    fn small_buffer_drops_frames() {
        let s = a1(30.0);
        let cb = Codebook::new(1).unwrap();
        let a = index(&cb, (3, 7), MacScheduler::RoundRobin, 6, 30);
        let ep = run_fixed(&s, a).unwrap();
        assert!(ep.steps.iter().all(|r| r.ues[0].metrics.observed_latency == ObservedLatency::Dropped));
        assert_eq!(ep.total_reward(), 0.0);
    }

    #[test]
    fn phy_change_waits_for_period_boundary() {
        let s = a1(30.0);
        let cb = Codebook::new(1).unwrap();
        let mut env = Environment::new(&s, index(&cb, (7, 3), MacScheduler::RoundRobin, 8, 30)).unwrap();
        for _ in 0..3 {
            env.step_slot();
        }
        env.apply_action(index(&cb, (5, 5), MacScheduler::RoundRobin, 8, 30)).unwrap();
        for _ in 3..10 {
            assert_eq!(env.tdd().ul_slots(), 3);
            env.step_slot();
        }
        env.step_slot();
        assert_eq!(env.tdd().ul_slots(), 5);
    }

    #[test]
    fn reapplying_same_action_is_a_noop() {
        let s = Scenario::preset("a2_24ms").unwrap();
        let mut a = Environment::new(&s, 123).unwrap();
        let mut b = a.clone();
        a.run_window().unwrap();
        b.apply_action(123).unwrap();
        b.run_window().unwrap();
        for _ in 0..5 {
            let ra = a.step(123).unwrap();
            b.apply_action(123).unwrap();
            let rb = b.step(123).unwrap();
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn episode_shape() {
        let s = a1(30.0);
        let ep = run_fixed(&s, 7).unwrap();
        assert_eq!(ep.steps.len(), 150);
        assert_eq!(ep.steps[0].window, 1);
        assert_eq!(ep.steps[149].window, 150);
        assert!(ep.steps.iter().all(|r| r.action_index == 7));
    }

    #[test]
    fn baseline_lookup() {
        let cb = Codebook::new(2).unwrap();
        let a = cb.decode(baseline_action(&cb, 4, "c").unwrap()).unwrap();
        assert_eq!((a.phy.dl_slots(), a.phy.ul_slots()), (3, 7));
        assert_eq!(a.mac, MacScheduler::ProportionalFair);
        assert!(a.ues.iter().all(|u| *u == UeAction { rlc_kb: 6, fps: 60 }));
        assert!(matches!(baseline_action(&cb, 5, "A"), Err(SimError::UnknownProfile(5))));
        assert!(matches!(baseline_action(&cb, 1, "E"), Err(SimError::UnknownPhy(_))));
    }

    #[test]
    fn sweep_refuses_large_k_without_force() {
        let mut s = Scenario::preset("a2_24ms").unwrap();
        let extra = s.ues[1].clone();
        s.ues.push(crate::scenario::UeSpec { id: 2, ..extra });
        assert!(matches!(oracle_sweep(&s, false), Err(SimError::SweepTooLarge { n_ues: 3, size: 8000 })));
    }

    #[test]
    fn modal_action_prefers_lowest_on_ties() {
        let s = a1(30.0);
        let mut ep = run_fixed(&s, 4).unwrap();
        for (i, st) in ep.steps.iter_mut().enumerate() {
            st.action_index = if i % 2 == 0 { 9 } else { 3 };
        }
        assert_eq!(ep.modal_action(10), Some(3));
    }
}
