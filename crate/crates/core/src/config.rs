//! The merged run configuration.
//!
//! A config file is a JSON object whose sections override the built-in
//! defaults key by key, so a file may name only what it changes. Unknown
//! keys anywhere are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{default_suite, ScenarioSpec, DEFAULT_STEP_CAP};
use crate::control::{PdController, PdGains};
use crate::disturbance::{Wind, WindCondition, WindLoadModel};
use crate::dynamics::{ActuatorParams, MmgCoefficients, ShipModel, ShipPrincipalParams};
use crate::error::{invalid, Result};
use crate::guidance::IlosParams;
use crate::mdp::EpisodeConfig;
use crate::ppo::PpoConfig;

/// Wind applied during training and single-goal evaluation. Scenario runs
/// use their own wind; `load_model` applies everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindSection {
    pub speed_mps: f64,
    pub direction_deg_toward: f64,
    pub load_model: WindLoadModel,
}

impl Default for WindSection {
    fn default() -> Self {
        Self { speed_mps: 0.0, direction_deg_toward: 0.0, load_model: WindLoadModel::default() }
    }
}

impl WindSection {
    pub fn wind(&self) -> Option<Wind> {
        (self.speed_mps > 0.0).then(|| Wind {
            condition: WindCondition::from_degrees(self.speed_mps, self.direction_deg_toward),
            model: self.load_model,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub pd: PdGains,
    pub ilos: IlosParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Scenario used when the command line names none.
    pub name: String,
    pub step_cap: usize,
    /// Extra scenarios appended to the built-in suite.
    pub custom: Vec<ScenarioSpec>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { name: "eight_6l".into(), step_cap: DEFAULT_STEP_CAP, custom: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ship: ShipPrincipalParams,
    pub mmg: MmgCoefficients,
    pub actuator: ActuatorParams,
    pub wind: WindSection,
    pub controller: ControllerSection,
    pub ppo: PpoConfig,
    pub episode: EpisodeConfig,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let kcs = ShipModel::kcs();
        Self {
            ship: kcs.principal,
            mmg: kcs.mmg,
            actuator: kcs.actuator,
            wind: WindSection::default(),
            controller: ControllerSection::default(),
            ppo: PpoConfig::default(),
            episode: EpisodeConfig::default(),
            scenario: ScenarioSection::default(),
            output: OutputSection::default(),
            seed: 0,
        }
    }
}

/// Recursively overlays `patch` onto `base`. Objects merge; anything else
/// replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with `text`, then validated.
    pub fn from_json(text: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(text)?;
        if !patch.is_object() {
            return Err(invalid("config must be a JSON object"));
        }
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, patch);
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model(&self) -> ShipModel {
        ShipModel { principal: self.ship, mmg: self.mmg, actuator: self.actuator }
    }

    pub fn pd_controller(&self) -> Result<PdController> {
        PdController::new(self.controller.pd, self.controller.ilos)
    }

    /// Built-in scenarios followed by the custom ones.
    pub fn suite(&self) -> Vec<ScenarioSpec> {
        let mut s = default_suite();
        s.extend(self.scenario.custom.iter().cloned());
        s
    }

    pub fn find_scenario(&self, name: &str) -> Result<ScenarioSpec> {
        self.suite()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| invalid(format!("unknown scenario `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.wind.load_model.validate()?;
        if !(self.wind.speed_mps >= 0.0 && self.wind.direction_deg_toward.is_finite()) {
            return Err(invalid("wind speed must be non-negative and direction finite"));
        }
        self.pd_controller()?;
        self.ppo.validate()?;
        self.episode.validate()?;
        if self.scenario.step_cap == 0 {
            return Err(invalid("scenario step_cap must be positive"));
        }
        let suite = self.suite();
        for (i, s) in suite.iter().enumerate() {
            if suite[..i].iter().any(|t| t.name == s.name) {
                return Err(invalid(format!("duplicate scenario name `{}`", s.name)));
            }
        }
        self.find_scenario(&self.scenario.name)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::PathSpec;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_roundtrip() {
        let d = RunConfig::default();
        let text = d.to_json_pretty().unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), d);
    }

    #[test]
    fn partial_override() {
        let c = RunConfig::from_json(r#"{"seed": 9, "controller": {"pd": {"K_p": 1.5}}, "ppo": {"iterations": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.controller.pd.k_p, 1.5);
        assert_eq!(c.controller.pd.k_d, 4.0);
        assert_eq!(c.ppo.iterations, 3);
        assert_eq!(c.ppo.episodes_per_iter, 50);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            r#"{"sed": 1}"#,
            r#"{"ppo": {"gama": 0.9}}"#,
            r#"{"ppo": {"gamma": 1.5}}"#,
            r#"{"controller": {"pd": {"K_p": -1}}}"#,
            r#"{"ship": {"L": -230}}"#,
            r#"{"scenario": {"name": "nowhere"}}"#,
            r#"{"wind": {"speed_mps": -1}}"#,
            "[]",
            "not json",
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn custom_scenarios_extend_the_suite() {
        let c = RunConfig::from_json(
            r#"{"scenario": {"name": "loop", "custom": [{"name": "loop", "path": {"kind": "eight", "radius_l": 8, "waypoints": 16}}]}}"#,
        )
        .unwrap();
        let s = c.find_scenario("loop").unwrap();
        assert_eq!(s.path, PathSpec::Eight { radius_l: 8.0, waypoints: 16 });
        let dup = r#"{"scenario": {"custom": [{"name": "ellipse", "path": {"kind": "square", "side_l": 5}}]}}"#;
        assert!(RunConfig::from_json(dup).is_err());
    }

    #[test]
    fn wind_section() {
        assert!(RunConfig::default().wind.wind().is_none());
        let c = RunConfig::from_json(r#"{"wind": {"speed_mps": 20, "direction_deg_toward": 90}}"#).unwrap();
        let w = c.wind.wind().unwrap();
        assert_eq!(w.condition.speed, 20.0);
        assert!((w.condition.direction - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
