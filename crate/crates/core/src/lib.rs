//! Ship path-following stack: an MMG maneuvering simulator for the KCS
//! container ship, a PPO agent trained for waypoint tracking, an ILOS-guided
//! PD autopilot baseline and the harness that compares them.

pub mod bench;
pub mod config;
pub mod control;
pub mod disturbance;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod mdp;
pub mod neural;
pub mod ppo;
pub mod units;

pub use bench::{ComparisonReport, RunMetrics, Scenario, ScenarioSpec, Trajectory};
pub use config::RunConfig;
pub use control::{Controller, ControllerCommand, PdController, PdGains, Policy, PpoController};
pub use disturbance::{Loads, Wind, WindCondition, WindLoadModel};
pub use dynamics::{ShipModel, ShipState};
pub use error::{Error, Result};
pub use geometry::{wrap_angle, Vec2};
pub use guidance::{GuidanceState, IlosParams, WaypointPath};
pub use mdp::{EpisodeConfig, Observation, RewardBreakdown, Status};
pub use neural::{AdamState, MlpParams};
pub use ppo::{Checkpoint, PpoConfig, RolloutBuffer, Trainer};
