//! Heading autopilot baseline and the controller interface shared by the
//! bench harness.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ShipModel, ShipState};
use crate::error::{invalid, Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::guidance::{ilos_desired_heading, GuidanceState, IlosParams, WaypointPath};
use crate::mdp::{observe_segment, Observation};
use crate::neural::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdGains {
    #[serde(rename = "K_p")]
    pub k_p: f64,
    /// Seconds; multiplies the dimensional yaw rate.
    #[serde(rename = "K_d")]
    pub k_d: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { k_p: 2.0, k_d: 4.0 }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_d >= 0.0) {
            return Err(invalid(format!("PD gains need K_p > 0 and K_d >= 0, got {} / {}", self.k_p, self.k_d)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerCommand {
    /// Commanded rudder angle (rad).
    pub delta_c: f64,
}

/// `δ_c = clamp(K_p·wrap(ψ_d − ψ) − K_d·r, ±δ_max)`.
pub fn pd_command(psi_d: f64, psi: f64, r: f64, gains: &PdGains, delta_max: f64) -> f64 {
    let e = wrap_angle(psi_d - psi);
    (gains.k_p * e - gains.k_d * r).clamp(-delta_max, delta_max)
}

/// What a controller sees at each control step.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub state: &'a ShipState,
    pub path: &'a WaypointPath,
    /// Start of the first segment.
    pub origin: Vec2,
    pub model: &'a ShipModel,
    pub dt: f64,
}

pub trait Controller: Send + Sync {
    fn name(&self) -> &str;

    /// Rudder command for this step. Controllers with guidance memory
    /// update `guidance` in place.
    fn command(&self, input: &ControlInput<'_>, guidance: &mut GuidanceState) -> Result<ControllerCommand>;
}

/// ILOS guidance feeding the PD heading law.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdController {
    pub gains: PdGains,
    pub ilos: IlosParams,
}

impl PdController {
    pub fn new(gains: PdGains, ilos: IlosParams) -> Result<Self> {
        gains.validate()?;
        if !(ilos.lookahead_l > 0.0 && ilos.integral_gain >= 0.0) {
            return Err(invalid("ILOS needs a positive lookahead and non-negative integral gain"));
        }
        Ok(Self { gains, ilos })
    }
}

impl Controller for PdController {
    fn name(&self) -> &str {
        "pd"
    }

    fn command(&self, input: &ControlInput<'_>, guidance: &mut GuidanceState) -> Result<ControllerCommand> {
        let model = input.model;
        let (psi_d, next) =
            ilos_desired_heading(input.state, input.path, input.origin, *guidance, &self.ilos, model.length(), input.dt)?;
        *guidance = next;
        let delta_c = pd_command(psi_d, input.state.psi, input.state.r, &self.gains, model.actuator.delta_max());
        Ok(ControllerCommand { delta_c })
    }
}

/// A trained actor with its fixed input scaling. The mean rudder command is
/// `δ_max·tanh(out₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub actor: MlpParams,
    /// Per-component multipliers applied to the observation before the net.
    pub input_scale: [f64; 4],
}

impl Policy {
    pub fn features(&self, obs: &Observation) -> [f64; 4] {
        let raw = obs.to_array();
        std::array::from_fn(|i| raw[i] * self.input_scale[i])
    }

    /// Mean action in normalized units, within (−1, 1).
    pub fn mean_normalized(&self, obs: &Observation) -> Result<f64> {
        Ok(self.actor.forward(&self.features(obs))?[0].tanh())
    }

    pub fn mean_action(&self, obs: &Observation, delta_max: f64) -> Result<f64> {
        Ok(self.mean_normalized(obs)? * delta_max)
    }
}

/// Deterministic (mean-action) evaluation of a trained policy. Each
/// waypoint is tracked as a single goal with the previous waypoint as the
/// segment start.
#[derive(Debug, Clone, Default)]
pub struct PpoController {
    pub policy: Option<Policy>,
}

impl PpoController {
    pub fn new(policy: Policy) -> Self {
        Self { policy: Some(policy) }
    }
}

impl Controller for PpoController {
    fn name(&self) -> &str {
        "ppo"
    }

    fn command(&self, input: &ControlInput<'_>, guidance: &mut GuidanceState) -> Result<ControllerCommand> {
        let policy = self.policy.as_ref().ok_or_else(|| Error::NotReady("PPO controller has no policy weights".into()))?;
        let (start, target) = input.path.segment(guidance.active_index, input.origin);
        let obs = observe_segment(input.state, start, target, input.model);
        let delta_c = policy.mean_action(&obs, input.model.actuator.delta_max())?;
        Ok(ControllerCommand { delta_c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const DMAX: f64 = 35.0 * PI / 180.0;

    #[test]
    fn pd_hand_values() {
        let g = PdGains { k_p: 2.0, k_d: 4.0 };
        assert_eq!(pd_command(0.3, 0.3, 0.0, &g, DMAX), 0.0);
        assert!((pd_command(0.1, 0.0, 0.0, &g, DMAX) - 0.2).abs() < 1e-15);
        assert!((pd_command(1.0, 0.0, 0.0, &g, DMAX) - 0.610_865_2).abs() < 1e-7);
        assert!((pd_command(0.0, 0.0, 0.01, &g, DMAX) + 0.04).abs() < 1e-15);
    }

    #[test]
    fn heading_error_wraps() {
        let g = PdGains::default();
        // 179° to −179° is a 2° turn to port, not 358° to starboard.
        let dc = pd_command((-179f64).to_radians(), 179f64.to_radians(), 0.0, &g, DMAX);
        assert!((dc - 2.0 * 2f64.to_radians()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pd_is_odd_and_bounded(e in -PI..PI, r in -0.1f64..0.1, kp in 0.1f64..5.0, kd in 0.0f64..20.0) {
            let g = PdGains { k_p: kp, k_d: kd };
            let a = pd_command(e, 0.0, r, &g, DMAX);
            let b = pd_command(-e, 0.0, -r, &g, DMAX);
            prop_assert!(a.abs() <= DMAX);
            if e.abs() < PI - 1e-9 {
                prop_assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gains_validation() {
        assert!(PdGains { k_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(PdGains { k_d: -1.0, ..Default::default() }.validate().is_err());
        assert!(PdGains::default().validate().is_ok());
    }

    fn straight_path(model: &ShipModel) -> WaypointPath {
        let l = model.length();
        WaypointPath::new(vec![Vec2::new(10.0 * l, 0.0), Vec2::new(20.0 * l, 0.0)], 0.5 * l).unwrap()
    }

    #[test]
    fn pd_on_path_commands_zero() {
        let model = ShipModel::kcs();
        let path = straight_path(&model);
        let state = ShipState::straight(Vec2::ZERO, 0.0, model.design_speed(), model.actuator.n_p);
        let input = ControlInput { state: &state, path: &path, origin: Vec2::ZERO, model: &model, dt: 5.0 };
        let pd = PdController::default();
        let mut g = GuidanceState::default();
        let a = pd.command(&input, &mut g).unwrap();
        let b = pd.command(&input, &mut GuidanceState::default()).unwrap();
        assert_eq!(a.delta_c, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn ppo_requires_policy() {
        let model = ShipModel::kcs();
        let path = straight_path(&model);
        let state = ShipState::straight(Vec2::ZERO, 0.0, model.design_speed(), model.actuator.n_p);
        let input = ControlInput { state: &state, path: &path, origin: Vec2::ZERO, model: &model, dt: 5.0 };
        let err = PpoController::default().command(&input, &mut GuidanceState::default()).unwrap_err();
        assert!(matches!(err, Error::NotReady(_)));
    }

    #[test]
    fn ppo_zero_network_commands_zero() {
        let model = ShipModel::kcs();
        let path = straight_path(&model);
        let state = ShipState::straight(Vec2::new(3.0, -700.0), 0.4, model.design_speed(), model.actuator.n_p);
        let input = ControlInput { state: &state, path: &path, origin: Vec2::ZERO, model: &model, dt: 5.0 };
        let actor = MlpParams::zeros(&[4, 8, 8, 1], 1).unwrap();
        let ctrl = PpoController::new(Policy { actor, input_scale: [1.0; 4] });
        assert_eq!(ctrl.command(&input, &mut GuidanceState::default()).unwrap().delta_c, 0.0);
    }
}
