//! Slot-level 5G TDD uplink simulator with a deep Q-learning agent that
//! picks joint PHY, MAC, RLC and application settings for XR uplink video.

pub mod codebook;
pub mod context;
pub mod dqn;
pub mod phy;
pub mod scenario;
pub mod sim;
pub mod uplink;

pub use codebook::{ActionTuple, Codebook, UeAction};
pub use context::{ObservedLatency, WindowMetrics};
pub use dqn::{Checkpoint, DqnAgent, QNetwork, TrainingConfig};
pub use phy::{CarrierConfig, Cqi, TddConfig};
pub use scenario::Scenario;
pub use sim::{EpisodeResult, Environment, SimError};
pub use uplink::MacScheduler;
