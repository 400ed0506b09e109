//! Fully connected Q-network with optional batch normalization and ReLU.
//!
//! Trainable parameters live in one flat vector so that the optimizer, the
//! soft target update and the checkpoint writer can treat them uniformly.
//! Per layer the layout is the weight matrix (`outputs x inputs`, row-major)
//! followed by either the bias vector or, for batch-normalized layers, the
//! BN scale and shift (a bias before BN would be redundant). BN running
//! statistics (mean then variance per BN layer) live in a second vector.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in the BN moving average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const HIDDEN_WIDTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("input dimension mismatch: network expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("layer {layer} does not chain: {outputs} outputs feed {inputs} inputs")]
    Chain { layer: usize, outputs: usize, inputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub batch_norm: bool,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    layers: Vec<LayerSpec>,
}

impl NetworkShape {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, NetworkError> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(NetworkError::Chain { layer: i + 1, outputs: pair[0].outputs, inputs: pair[1].inputs });
            }
        }
        Ok(Self { layers })
    }

    /// `hidden` ReLU layers, the first `bn_layers` of them batch-normalized,
    /// then a linear output head.
    pub fn mlp(inputs: usize, hidden: &[usize], bn_layers: usize, outputs: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LayerSpec { inputs: fan_in, outputs: h, batch_norm: i < bn_layers, relu: true });
            fan_in = h;
        }
        layers.push(LayerSpec { inputs: fan_in, outputs, batch_norm: false, relu: false });
        Self { layers }
    }

    /// FC256+BN+ReLU, FC256+BN+ReLU, FC256+ReLU, FC(actions).
    pub fn q_network(state_dim: usize, n_actions: usize) -> Self {
        Self::mlp(state_dim, &[HIDDEN_WIDTH; 3], 2, n_actions)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.inputs * l.outputs + if l.batch_norm { 2 * l.outputs } else { l.outputs }).sum()
    }

    pub fn running_count(&self) -> usize {
        self.layers.iter().filter(|l| l.batch_norm).map(|l| 2 * l.outputs).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Offsets {
    weight: usize,
    /// Bias, or BN scale when batch-normalized; BN shift follows it.
    vector: usize,
    running: Option<usize>,
}

fn layout(shape: &NetworkShape) -> Vec<Offsets> {
    let mut p = 0;
    let mut r = 0;
    shape
        .layers
        .iter()
        .map(|l| {
            let weight = p;
            p += l.inputs * l.outputs;
            let vector = p;
            p += if l.batch_norm { 2 * l.outputs } else { l.outputs };
            let running = l.batch_norm.then(|| {
                let at = r;
                r += 2 * l.outputs;
                at
            });
            Offsets { weight, vector, running }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Values entering the ReLU.
    pre_activation: Vec<f64>,
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetworkShape,
    offsets: Vec<Offsets>,
    pub params: Vec<f64>,
    pub running: Vec<f64>,
}

impl QNetwork {
    /// All weights and shifts zero, BN scales one, running variance one.
    pub fn zeros(shape: NetworkShape) -> Self {
        let offsets = layout(&shape);
        let mut net = Self {
            params: vec![0.0; shape.param_count()],
            running: vec![0.0; shape.running_count()],
            offsets,
            shape,
        };
        for (l, o) in net.shape.layers.iter().zip(&net.offsets) {
            if l.batch_norm {
                net.params[o.vector..o.vector + l.outputs].fill(1.0);
                let r = o.running.expect("bn layer has running stats");
                net.running[r + l.outputs..r + 2 * l.outputs].fill(1.0);
            }
        }
        net
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        for (l, o) in net.shape.layers.iter().zip(&net.offsets) {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            for w in &mut net.params[o.weight..o.weight + l.inputs * l.outputs] {
                *w = rng.gen_range(-bound..bound);
            }
            if !l.batch_norm {
                for b in &mut net.params[o.vector..o.vector + l.outputs] {
                    *b = rng.gen_range(-bound..bound);
                }
            }
        }
        net
    }

    pub fn from_parts(shape: NetworkShape, params: Vec<f64>, running: Vec<f64>) -> Option<Self> {
        if params.len() != shape.param_count() || running.len() != shape.running_count() {
            return None;
        }
        Some(Self { offsets: layout(&shape), shape, params, running })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim()
    }

    /// Inference with BN running statistics. `input` is `batch x input_dim`
    /// row-major.
    pub fn forward_eval(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        let batch = self.batch_of(input)?;
        let mut x = input.to_vec();
        for (l, o) in self.shape.layers.iter().zip(&self.offsets) {
            let mut z = self.linear(l, o, &x, batch);
            if l.batch_norm {
                let r = o.running.expect("bn layer has running stats");
                let (mean, var) = self.running[r..r + 2 * l.outputs].split_at(l.outputs);
                let (gamma, beta) = self.params[o.vector..o.vector + 2 * l.outputs].split_at(l.outputs);
                for row in z.chunks_exact_mut(l.outputs) {
                    for j in 0..l.outputs {
                        row[j] = gamma[j] * (row[j] - mean[j]) / (var[j] + BN_EPS).sqrt() + beta[j];
                    }
                }
            }
            if l.relu {
                relu_in_place(&mut z);
            }
            x = z;
        }
        Ok(x)
    }

    /// Dispatches on `mode`; train mode updates BN running statistics.
    pub fn forward(&mut self, input: &[f64], mode: Mode) -> Result<(Vec<f64>, Option<ForwardCache>), NetworkError> {
        match mode {
            Mode::Eval => Ok((self.forward_eval(input)?, None)),
            Mode::Train => {
                let (out, cache, stats) = self.forward_batch_stats(input)?;
                self.absorb_running_stats(&stats, cache.batch);
                Ok((out, Some(cache)))
            }
        }
    }

    /// Train-mode forward pass that leaves the running statistics untouched.
    pub fn forward_train_pure(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetworkError> {
        let (out, cache, _) = self.forward_batch_stats(input)?;
        Ok((out, cache))
    }

    fn forward_batch_stats(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache, Vec<(Vec<f64>, Vec<f64>)>), NetworkError> {
        let batch = self.batch_of(input)?;
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.shape.layers.len());
        let mut stats = Vec::new();
        for (l, o) in self.shape.layers.iter().zip(&self.offsets) {
            let mut z = self.linear(l, o, &x, batch);
            let mut cache = LayerCache::default();
            if l.batch_norm {
                let n = l.outputs;
                let (gamma, beta) = self.params[o.vector..o.vector + 2 * n].split_at(n);
                let mut mean = vec![0.0; n];
                for row in z.chunks_exact(n) {
                    for j in 0..n {
                        mean[j] += row[j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= batch as f64);
                let mut var = vec![0.0; n];
                for row in z.chunks_exact(n) {
                    for j in 0..n {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= batch as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = z.clone();
                for (xrow, zrow) in xhat.chunks_exact_mut(n).zip(z.chunks_exact_mut(n)) {
                    for j in 0..n {
                        xrow[j] = (xrow[j] - mean[j]) * inv_std[j];
                        zrow[j] = gamma[j] * xrow[j] + beta[j];
                    }
                }
                cache.xhat = xhat;
                cache.inv_std = inv_std;
                stats.push((mean, var));
            }
            if l.relu {
                cache.pre_activation = z.clone();
                relu_in_place(&mut z);
            }
            cache.input = x;
            caches.push(cache);
            x = z;
        }
        Ok((x, ForwardCache { batch, layers: caches }, stats))
    }

    fn absorb_running_stats(&mut self, stats: &[(Vec<f64>, Vec<f64>)], batch: usize) {
        let correction = if batch > 1 { batch as f64 / (batch as f64 - 1.0) } else { 1.0 };
        let mut it = stats.iter();
        for (l, o) in self.shape.layers.iter().zip(&self.offsets) {
            let Some(r) = o.running else { continue };
            let (mean, var) = it.next().expect("one stat pair per bn layer");
            let n = l.outputs;
            for j in 0..n {
                let rm = &mut self.running[r + j];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean[j];
                let rv = &mut self.running[r + n + j];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var[j] * correction;
            }
        }
    }

    /// Gradients of the loss w.r.t. every trainable parameter, given the loss
    /// gradient w.r.t. the network output. `grads` is overwritten.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut Vec<f64>) {
        grads.clear();
        grads.resize(self.params.len(), 0.0);
        let batch = cache.batch;
        let mut delta = d_output.to_vec();
        for (idx, (l, o)) in self.shape.layers.iter().zip(&self.offsets).enumerate().rev() {
            let c = &cache.layers[idx];
            let n = l.outputs;
            if l.relu {
                for (d, &p) in delta.iter_mut().zip(&c.pre_activation) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if l.batch_norm {
                let gamma = &self.params[o.vector..o.vector + n];
                let mut d_gamma = vec![0.0; n];
                let mut d_beta = vec![0.0; n];
                for (drow, xrow) in delta.chunks_exact(n).zip(c.xhat.chunks_exact(n)) {
                    for j in 0..n {
                        d_gamma[j] += drow[j] * xrow[j];
                        d_beta[j] += drow[j];
                    }
                }
                // dxhat = delta * gamma; sum(dxhat) = gamma * d_beta; sum(dxhat * xhat) = gamma * d_gamma.
                let b = batch as f64;
                for (drow, xrow) in delta.chunks_exact_mut(n).zip(c.xhat.chunks_exact(n)) {
                    for j in 0..n {
                        let dxhat = drow[j] * gamma[j];
                        drow[j] = c.inv_std[j] / b
                            * (b * dxhat - gamma[j] * d_beta[j] - xrow[j] * gamma[j] * d_gamma[j]);
                    }
                }
                grads[o.vector..o.vector + n].copy_from_slice(&d_gamma);
                grads[o.vector + n..o.vector + 2 * n].copy_from_slice(&d_beta);
            } else {
                let d_bias = &mut grads[o.vector..o.vector + n];
                for drow in delta.chunks_exact(n) {
                    for j in 0..n {
                        d_bias[j] += drow[j];
                    }
                }
            }
            // dW (out x in) = delta^T (out x B) * input (B x in)
            gemm(
                n,
                batch,
                l.inputs,
                &delta,
                (1, n),
                &c.input,
                (l.inputs, 1),
                &mut grads[o.weight..o.weight + n * l.inputs],
                (l.inputs, 1),
            );
            if idx > 0 {
                let mut d_input = vec![0.0; batch * l.inputs];
                // dX (B x in) = delta (B x out) * W (out x in)
                gemm(
                    batch,
                    n,
                    l.inputs,
                    &delta,
                    (n, 1),
                    &self.params[o.weight..o.weight + n * l.inputs],
                    (l.inputs, 1),
                    &mut d_input,
                    (l.inputs, 1),
                );
                delta = d_input;
            }
        }
    }

    fn batch_of(&self, input: &[f64]) -> Result<usize, NetworkError> {
        let dim = self.input_dim();
        if dim == 0 || input.is_empty() || input.len() % dim != 0 {
            return Err(NetworkError::Dimension { expected: dim, got: input.len() });
        }
        Ok(input.len() / dim)
    }

    fn linear(&self, l: &LayerSpec, o: &Offsets, x: &[f64], batch: usize) -> Vec<f64> {
        let mut z = vec![0.0; batch * l.outputs];
        if !l.batch_norm {
            let bias = &self.params[o.vector..o.vector + l.outputs];
            for row in z.chunks_exact_mut(l.outputs) {
                row.copy_from_slice(bias);
            }
        }
        // Z (B x out) += X (B x in) * W^T (in x out)
        gemm_acc(
            batch,
            l.inputs,
            l.outputs,
            x,
            (l.inputs, 1),
            &self.params[o.weight..o.weight + l.inputs * l.outputs],
            (1, l.inputs),
            &mut z,
            (l.outputs, 1),
            1.0,
        );
        z
    }

    /// Per-parameter convex blend `self <- tau * online + (1 - tau) * self`,
    /// running statistics included.
    pub fn soft_update_from(&mut self, online: &QNetwork, tau: f64) {
        assert_eq!(self.shape, online.shape, "soft update needs matching shapes");
        for (t, &s) in self.params.iter_mut().zip(&online.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        for (t, &s) in self.running.iter_mut().zip(&online.running) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    gemm_acc(m, k, n, a, a_strides, b, b_strides, c, c_strides, 0.0)
}

/// `C = A * B + beta * C` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn q_network_layout() {
        let s = NetworkShape::q_network(40, 80);
        assert_eq!(s.layers().len(), 4);
        assert_eq!(s.input_dim(), 40);
        assert_eq!(s.output_dim(), 80);
        assert!(s.layers()[0].batch_norm && s.layers()[1].batch_norm && !s.layers()[2].batch_norm);
        assert_eq!(s.param_count(), 40 * 256 + 512 + 256 * 256 + 512 + 256 * 256 + 256 + 256 * 80 + 80);
        assert!(NetworkShape::new(vec![
            LayerSpec { inputs: 3, outputs: 4, batch_norm: false, relu: true },
            LayerSpec { inputs: 5, outputs: 2, batch_norm: false, relu: false },
        ])
        .is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(NetworkShape::q_network(40, 80));
        let out = net.forward_eval(&vec![0.7; 40 * 3]).unwrap();
        assert_eq!(out.len(), 240);
        assert!(out.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn eval_is_repeatable() {
        let net = QNetwork::init(NetworkShape::q_network(40, 80), &mut rng(1));
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        assert_eq!(net.forward_eval(&x).unwrap(), net.forward_eval(&x).unwrap());
    }

    #[test]
    fn dimension_errors() {
        let net = QNetwork::zeros(NetworkShape::q_network(40, 80));
        assert_eq!(net.forward_eval(&[0.0; 39]), Err(NetworkError::Dimension { expected: 40, got: 39 }));
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let shape = NetworkShape::mlp(5, &[6], 1, 2);
        let net = QNetwork::init(shape, &mut rng(3));
        let mut r = rng(4);
        let x: Vec<f64> = (0..5 * 32).map(|_| r.gen_range(-2.0..2.0)).collect();
        let (_, cache) = net.forward_train_pure(&x).unwrap();
        let xhat = &cache.layers[0].xhat;
        for j in 0..6 {
            let col: Vec<f64> = xhat.chunks_exact(6).map(|row| row[j]).collect();
            let mean = col.iter().sum::<f64>() / 32.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn train_mode_moves_running_stats() {
        let shape = NetworkShape::mlp(3, &[4], 1, 2);
        let mut net = QNetwork::init(shape, &mut rng(5));
        let before = net.running.clone();
        net.forward(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0], Mode::Train).unwrap();
        assert_ne!(net.running, before);
        assert!(net.running[4..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let shape = NetworkShape::mlp(4, &[5, 5], 1, 3);
        let net = QNetwork::init(shape, &mut rng(6));
        let (_, cache) = net.forward_train_pure(&[0.3; 8]).unwrap();
        let mut g = Vec::new();
        net.backward(&cache, &[0.0; 6], &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_outer_product() {
        let shape = NetworkShape::mlp(3, &[], 0, 2);
        let net = QNetwork::init(shape, &mut rng(7));
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let d = [0.25, -1.0, 2.0, 0.5];
        let (_, cache) = net.forward_train_pure(&x).unwrap();
        let mut g = Vec::new();
        net.backward(&cache, &d, &mut g);
        for o in 0..2 {
            for i in 0..3 {
                let expected = d[o] * x[i] + d[2 + o] * x[3 + i];
                assert!((g[o * 3 + i] - expected).abs() < 1e-12);
            }
            assert!((g[6 + o] - (d[o] + d[2 + o])).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_blends() {
        let shape = NetworkShape::mlp(2, &[2], 1, 1);
        let mut target = QNetwork::zeros(shape.clone());
        target.params.fill(0.0);
        target.running.fill(0.0);
        let mut online = target.clone();
        online.params.fill(2.0);
        online.running.fill(2.0);
        let mut half = target.clone();
        half.soft_update_from(&online, 0.5);
        assert!(half.params.iter().chain(&half.running).all(|&v| v == 1.0));
        let mut same = target.clone();
        same.soft_update_from(&online, 0.0);
        assert_eq!(same, target);
        let mut full = target.clone();
        full.soft_update_from(&online, 1.0);
        assert_eq!(full, online);
    }
}
