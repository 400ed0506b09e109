use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::network::{NetworkShape, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::TrainingConfig;

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's outputs, BN in inference mode.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..net.output_dim())
    } else {
        let q = net.forward_eval(state).expect("state matches network input");
        greedy_index(&q)
    }
}

/// `r` for terminal transitions, else `r + gamma * max_a Q_target(s', a)`.
pub fn td_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Vec<f64> {
    let live: Vec<&Transition> = batch.iter().copied().filter(|t| !t.terminal).collect();
    let next_q = if live.is_empty() {
        Vec::new()
    } else {
        let states: Vec<f64> = live.iter().flat_map(|t| t.next_state.iter().copied()).collect();
        target.forward_eval(&states).expect("next state matches network input")
    };
    let n_out = target.output_dim();
    let mut live_rows = next_q.chunks_exact(n_out.max(1));
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let row = live_rows.next().expect("one row per live transition");
                t.reward + gamma * row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Mean squared TD error over the batch and its gradient w.r.t. the outputs.
pub fn td_loss_gradient(q: &[f64], n_actions: usize, actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
    let b = actions.len() as f64;
    let mut grad = vec![0.0; q.len()];
    let mut loss = 0.0;
    for (row, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let idx = row * n_actions + a;
        let err = q[idx] - y;
        loss += err * err;
        grad[idx] = 2.0 * err / b;
    }
    (loss / b, grad)
}

/// One gradient step of the online network on a batch. Returns the batch
/// loss before the update.
pub fn train_step(online: &mut QNetwork, optimizer: &mut Adam, batch: &[&Transition], targets: &[f64], grads: &mut Vec<f64>) -> f64 {
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (q, cache) = online.forward(&states, super::Mode::Train).expect("state matches network input");
    let cache = cache.expect("train mode returns a cache");
    let (loss, d_q) = td_loss_gradient(&q, online.output_dim(), &actions, targets);
    online.backward(&cache, &d_q, grads);
    optimizer.step(&mut online.params, grads);
    loss
}

/// Online and target networks, optimizer, replay memory and exploration
/// state of one learner.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub replay: ReplayBuffer,
    pub config: TrainingConfig,
    /// Environment steps observed so far (drives the epsilon schedule).
    pub steps: u64,
    rng: ChaCha8Rng,
    grads: Vec<f64>,
}

impl DqnAgent {
    pub fn new(state_dim: usize, n_actions: usize, config: TrainingConfig, seed: u64) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(0);
        let online = QNetwork::init(NetworkShape::q_network(state_dim, n_actions), &mut init_rng);
        Self::from_networks(online.clone(), online, config, seed)
    }

    pub fn from_networks(online: QNetwork, target: QNetwork, config: TrainingConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            optimizer: Adam::new(online.params.len(), config.adam()),
            replay: ReplayBuffer::new(config.replay_capacity),
            online,
            target,
            config,
            steps: 0,
            rng,
            grads: Vec::new(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.steps)
    }

    pub fn act(&mut self, state: &[f64]) -> usize {
        let eps = self.epsilon();
        select_action(&self.online, state, eps, &mut self.rng)
    }

    pub fn act_greedy(&self, state: &[f64]) -> usize {
        greedy_index(&self.online.forward_eval(state).expect("state matches network input"))
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
        self.steps += 1;
    }

    /// Samples a batch and takes one gradient step; `None` while the replay
    /// memory holds fewer transitions than a batch.
    pub fn optimize(&mut self) -> Option<f64> {
        let batch = self.replay.sample(&mut self.rng, self.config.batch_size).ok()?;
        let targets = td_targets(&batch, &self.target, self.config.gamma);
        Some(train_step(&mut self.online, &mut self.optimizer, &batch, &targets, &mut self.grads))
    }

    pub fn soft_update(&mut self) {
        self.target.soft_update_from(&self.online, self.config.tau);
    }
}
