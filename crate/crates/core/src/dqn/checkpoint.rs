//! Binary checkpoint of a learner.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic "XLAYERQ1" | version u8 | ue count u32 | codebook size u32
//! layer count u32 | per layer: inputs u32, outputs u32, flags u8 (bit0 BN, bit1 ReLU)
//! online params f64* | online BN stats f64*
//! target params f64* | target BN stats f64*
//! Adam first moments f64* | Adam second moments f64* | Adam step u64
//! agent step counter u64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::adam::{Adam, AdamConfig};
use super::network::{LayerSpec, NetworkShape, QNetwork};
use super::DqnAgent;
use crate::context::STATE_DIM_PER_UE;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XLAYERQ1";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint {field} mismatch: expected {expected}, found {found}")]
    Mismatch { field: &'static str, expected: u64, found: u64 },
    #[error("invalid layer table: {0}")]
    Shape(String),
    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),
}

/// Everything needed to resume training or run a trained policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n_ues: u32,
    pub codebook_size: u32,
    pub online: QNetwork,
    pub target: QNetwork,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    pub steps: u64,
}

impl Checkpoint {
    pub fn from_agent(agent: &DqnAgent, n_ues: usize) -> Self {
        Self {
            n_ues: n_ues as u32,
            codebook_size: agent.online.output_dim() as u32,
            online: agent.online.clone(),
            target: agent.target.clone(),
            adam_m: agent.optimizer.m.clone(),
            adam_v: agent.optimizer.v.clone(),
            adam_t: agent.optimizer.t,
            steps: agent.steps,
        }
    }

    pub fn into_agent(self, config: super::TrainingConfig, seed: u64) -> DqnAgent {
        let adam_config: AdamConfig = config.adam();
        let mut agent = DqnAgent::from_networks(self.online, self.target, config, seed);
        agent.optimizer = Adam { config: adam_config, m: self.adam_m, v: self.adam_v, t: self.adam_t };
        agent.steps = self.steps;
        agent
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&self.n_ues.to_le_bytes());
        out.extend_from_slice(&self.codebook_size.to_le_bytes());
        let layers = self.online.shape().layers();
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in layers {
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            out.push(u8::from(l.batch_norm) | (u8::from(l.relu) << 1));
        }
        for block in [
            &self.online.params,
            &self.online.running,
            &self.target.params,
            &self.target.running,
            &self.adam_m,
            &self.adam_v,
        ] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.adam_t.to_le_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.take(1, "version")?[0];
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let n_ues = r.u32("ue count")?;
        let codebook_size = r.u32("codebook size")?;
        let n_layers = r.u32("layer count")? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(CheckpointError::Shape(format!("{n_layers} layers")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let inputs = r.u32("layer inputs")? as usize;
            let outputs = r.u32("layer outputs")? as usize;
            let flags = r.take(1, "layer flags")?[0];
            layers.push(LayerSpec { inputs, outputs, batch_norm: flags & 1 != 0, relu: flags & 2 != 0 });
        }
        let shape = NetworkShape::new(layers).map_err(|e| CheckpointError::Shape(e.to_string()))?;
        let expected_input = u64::from(n_ues) * STATE_DIM_PER_UE as u64;
        if shape.input_dim() as u64 != expected_input {
            return Err(CheckpointError::Mismatch {
                field: "input dimension",
                expected: expected_input,
                found: shape.input_dim() as u64,
            });
        }
        if shape.output_dim() as u64 != u64::from(codebook_size) {
            return Err(CheckpointError::Mismatch {
                field: "output dimension",
                expected: u64::from(codebook_size),
                found: shape.output_dim() as u64,
            });
        }
        let np = shape.param_count();
        let nr = shape.running_count();
        let online_params = r.f64s(np, "online parameters")?;
        let online_running = r.f64s(nr, "online batch-norm statistics")?;
        let target_params = r.f64s(np, "target parameters")?;
        let target_running = r.f64s(nr, "target batch-norm statistics")?;
        let adam_m = r.f64s(np, "adam first moments")?;
        let adam_v = r.f64s(np, "adam second moments")?;
        let adam_t = r.u64("adam step")?;
        let steps = r.u64("step counter")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let online = QNetwork::from_parts(shape.clone(), online_params, online_running).expect("sizes derived from shape");
        let target = QNetwork::from_parts(shape, target_params, target_running).expect("sizes derived from shape");
        Ok(Self { n_ues, codebook_size, online, target, adam_m, adam_v, adam_t, steps })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks that the checkpoint was trained for `n_ues` UEs.
    pub fn load_for(path: &Path, n_ues: usize) -> Result<Self, CheckpointError> {
        let ck = Self::load(path)?;
        if ck.n_ues as usize != n_ues {
            return Err(CheckpointError::Mismatch {
                field: "input dimension",
                expected: (n_ues * STATE_DIM_PER_UE) as u64,
                found: ck.online.input_dim() as u64,
            });
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(field))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(field))?, field)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::{TrainingConfig, Transition};

    fn trained_agent() -> DqnAgent {
        let cfg = TrainingConfig { batch_size: 8, replay_capacity: 32, ..Default::default() };
        let mut agent = DqnAgent::new(40, 80, cfg, 3);
        for i in 0..12 {
            let s: Vec<f64> = (0..40).map(|j| ((i * 7 + j) % 11) as f64 / 11.0).collect();
            agent.remember(Transition { state: s.clone(), action: i % 80, next_state: s, reward: i as f64, terminal: i == 11 });
        }
        agent.optimize().unwrap();
        agent.soft_update();
        agent
    }

    #[test]
    fn roundtrip_is_exact() {
        let agent = trained_agent();
        let ck = Checkpoint::from_agent(&agent, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let x = vec![0.25; 40];
        let restored = back.into_agent(TrainingConfig::default(), 0);
        assert_eq!(restored.online.forward_eval(&x).unwrap(), agent.online.forward_eval(&x).unwrap());
        assert_eq!(restored.optimizer.t, agent.optimizer.t);
        assert_eq!(restored.steps, 12);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = Checkpoint::from_agent(&trained_agent(), 1).to_bytes();
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn bad_header_is_rejected() {
        let mut bytes = Checkpoint::from_agent(&trained_agent(), 1).to_bytes();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
        bytes[0] = b'Z';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn ue_count_mismatch_names_input_dimension() {
        let ck = Checkpoint::from_agent(&trained_agent(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        ck.save(&path).unwrap();
        let err = Checkpoint::load_for(&path, 2).unwrap_err();
        assert!(err.to_string().contains("input dimension"), "{err}");
        // A header claiming two UEs over a 40-input network is inconsistent too.
        let mut bytes = ck.to_bytes();
        bytes[9..13].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("input dimension"), "{err}");
    }
}
