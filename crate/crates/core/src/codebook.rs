//! Joint cross-layer action space.
//!
//! An action index is a mixed-radix number, most significant digit first:
//! PHY split (radix 4), MAC scheduler (radix 2), then for every UE in id
//! order its RLC buffer size (radix 5) and frame rate (radix 2). The digit
//! order is part of the on-disk format of metrics and checkpoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::TddConfig;
use crate::uplink::MacScheduler;

pub const PHY_OPTIONS: [(u8, u8); 4] = [(7, 3), (6, 4), (5, 5), (3, 7)];
pub const MAC_OPTIONS: [MacScheduler; 2] = [MacScheduler::RoundRobin, MacScheduler::ProportionalFair];
pub const RLC_KB_OPTIONS: [u32; 5] = [2, 4, 6, 8, 10];
pub const FPS_OPTIONS: [u32; 2] = [30, 60];

const PER_UE_RADIX: usize = RLC_KB_OPTIONS.len() * FPS_OPTIONS.len();
const CELL_RADIX: usize = PHY_OPTIONS.len() * MAC_OPTIONS.len();

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodebookError {
    #[error("action index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("action carries {got} UE entries, codebook expects {expected}")]
    UeCount { expected: usize, got: usize },
    #[error("value not in the codebook option set: {0}")]
    UnknownOption(String),
    #[error("codebook needs at least one UE")]
    NoUes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UeAction {
    pub rlc_kb: u32,
    pub fps: u32,
}

/// One decoded codebook entry. PHY and MAC are cell-wide.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    pub phy: TddConfig,
    pub mac: MacScheduler,
    pub ues: Vec<UeAction>,
}

impl ActionTuple {
    pub fn total_rlc_kb(&self) -> u32 {
        self.ues.iter().map(|u| u.rlc_kb).sum()
    }

    pub fn total_fps(&self) -> u32 {
        self.ues.iter().map(|u| u.fps).sum()
    }
}

/// Index ↔ action bijection for a fixed UE count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codebook {
    n_ues: usize,
    size: usize,
}

pub fn codebook_size(n_ues: usize) -> usize {
    CELL_RADIX * PER_UE_RADIX.pow(n_ues as u32)
}

impl Codebook {
    pub fn new(n_ues: usize) -> Result<Self, CodebookError> {
        if n_ues == 0 {
            return Err(CodebookError::NoUes);
        }
        Ok(Self { n_ues, size: codebook_size(n_ues) })
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn decode(&self, index: usize) -> Result<ActionTuple, CodebookError> {
        if index >= self.size {
            return Err(CodebookError::IndexOutOfRange { index, size: self.size });
        }
        let mut rest = index;
        let mut ues = vec![UeAction { rlc_kb: 0, fps: 0 }; self.n_ues];
        for ue in ues.iter_mut().rev() {
            ue.fps = FPS_OPTIONS[rest % FPS_OPTIONS.len()];
            rest /= FPS_OPTIONS.len();
            ue.rlc_kb = RLC_KB_OPTIONS[rest % RLC_KB_OPTIONS.len()];
            rest /= RLC_KB_OPTIONS.len();
        }
        let mac = MAC_OPTIONS[rest % MAC_OPTIONS.len()];
        rest /= MAC_OPTIONS.len();
        let (dl, ul) = PHY_OPTIONS[rest];
        let phy = TddConfig::new(dl, ul).expect("codebook PHY options are valid");
        Ok(ActionTuple { phy, mac, ues })
    }

    pub fn encode(&self, action: &ActionTuple) -> Result<usize, CodebookError> {
        if action.ues.len() != self.n_ues {
            return Err(CodebookError::UeCount { expected: self.n_ues, got: action.ues.len() });
        }
        let phy = PHY_OPTIONS
            .iter()
            .position(|&(dl, ul)| dl == action.phy.dl_slots() && ul == action.phy.ul_slots())
            .ok_or_else(|| CodebookError::UnknownOption(format!("phy {}", action.phy)))?;
        let mac = MAC_OPTIONS.iter().position(|&m| m == action.mac).expect("all schedulers are options");
        let mut index = phy * MAC_OPTIONS.len() + mac;
        for ue in &action.ues {
            let rlc = RLC_KB_OPTIONS
                .iter()
                .position(|&k| k == ue.rlc_kb)
                .ok_or_else(|| CodebookError::UnknownOption(format!("rlc {} KB", ue.rlc_kb)))?;
            let fps = FPS_OPTIONS
                .iter()
                .position(|&f| f == ue.fps)
                .ok_or_else(|| CodebookError::UnknownOption(format!("fps {}", ue.fps)))?;
            index = (index * RLC_KB_OPTIONS.len() + rlc) * FPS_OPTIONS.len() + fps;
        }
        Ok(index)
    }
}
