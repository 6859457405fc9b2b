//! Scenario construction, closed-loop runs and the controller comparison.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::control::{ControlInput, Controller};
use crate::disturbance::{Wind, WindCondition, WindLoadModel};
use crate::dynamics::{self, ShipModel, ShipState};
use crate::error::{invalid, Error, Result};
use crate::geometry::Vec2;
use crate::guidance::{advance_waypoint, GuidanceState, WaypointPath};
use crate::mdp::{observe_segment, reward};

/// Default step cap, 50 training horizons.
pub const DEFAULT_STEP_CAP: usize = 8000;

/// Path geometry, in ship lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    /// `waypoints` evenly spaced along +x out to `length_l`; the ship starts
    /// at `(0, offset_l)` heading +x.
    Straight { length_l: f64, waypoints: usize, offset_l: f64 },
    /// A single destination from the origin.
    Quadrant { x_l: f64, y_l: f64 },
    /// Closed ellipse traversed clockwise from `(semi_x_l, 0)`; the first and
    /// last waypoints coincide.
    Ellipse { semi_x_l: f64, semi_y_l: f64, waypoints: usize },
    /// Two circles tangent at the origin: the lower one clockwise, then the
    /// upper one counter-clockwise, starting at the origin heading +x.
    Eight { radius_l: f64, waypoints: usize },
    /// Counter-clockwise square from the origin, closing on the start corner.
    Square { side_l: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    /// Multiple of the design speed.
    pub speed_u: f64,
    pub direction_deg_toward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub path: PathSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<WindSpec>,
}

impl ScenarioSpec {
    pub fn new(name: &str, path: PathSpec) -> Self {
        Self { name: name.to_string(), path, wind: None }
    }

    pub fn with_wind(mut self, speed_u: f64, direction_deg_toward: f64) -> Self {
        self.wind = Some(WindSpec { speed_u, direction_deg_toward });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub path: WaypointPath,
    pub wind: WindCondition,
    /// Start of the first segment.
    pub origin: Vec2,
    pub initial: ShipState,
}

/// The built-in suite, in a fixed order.
pub fn default_suite() -> Vec<ScenarioSpec> {
    let mut suite = vec![
        ScenarioSpec::new("quadrant_pp", PathSpec::Quadrant { x_l: 10.0, y_l: 10.0 }),
        ScenarioSpec::new("quadrant_mp", PathSpec::Quadrant { x_l: -10.0, y_l: 10.0 }),
        ScenarioSpec::new("quadrant_pm", PathSpec::Quadrant { x_l: 10.0, y_l: -10.0 }),
        ScenarioSpec::new("quadrant_mm", PathSpec::Quadrant { x_l: -10.0, y_l: -10.0 }),
        ScenarioSpec::new("ellipse", PathSpec::Ellipse { semi_x_l: 14.0, semi_y_l: 12.0, waypoints: 15 }),
        ScenarioSpec::new("eight_9l", PathSpec::Eight { radius_l: 9.0, waypoints: 23 }),
        ScenarioSpec::new("eight_6l", PathSpec::Eight { radius_l: 6.0, waypoints: 20 }),
        ScenarioSpec::new("square_10l", PathSpec::Square { side_l: 10.0 }),
        ScenarioSpec::new("straight_offset_2l", PathSpec::Straight { length_l: 60.0, waypoints: 1, offset_l: 2.0 }),
    ];
    let straight = PathSpec::Straight { length_l: 30.0, waypoints: 3, offset_l: 0.0 };
    suite.push(ScenarioSpec::new("wind_a", straight.clone()).with_wind(6.0, -90.0));
    suite.push(ScenarioSpec::new("wind_b", straight).with_wind(3.0, 180.0));
    suite
}

pub fn find_scenario(name: &str) -> Result<ScenarioSpec> {
    default_suite()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| invalid(format!("unknown scenario `{name}`")))
}

/// Waypoints (in ship lengths), start position and heading for a path.
fn path_geometry(spec: &PathSpec) -> Result<(Vec<Vec2>, Vec2, f64)> {
    let positive = |v: f64, what: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("{what} must be positive, got {v}")))
        }
    };
    Ok(match *spec {
        PathSpec::Straight { length_l, waypoints, offset_l } => {
            positive(length_l, "straight length")?;
            if waypoints == 0 {
                return Err(invalid("straight path needs at least one waypoint"));
            }
            let pts = (1..=waypoints).map(|k| Vec2::new(length_l * k as f64 / waypoints as f64, 0.0)).collect();
            (pts, Vec2::new(0.0, offset_l), 0.0)
        }
        PathSpec::Quadrant { x_l, y_l } => {
            let p = Vec2::new(x_l, y_l);
            if !(p.norm() > 0.0) {
                return Err(invalid("quadrant destination must differ from the origin"));
            }
            (vec![p], Vec2::ZERO, 0.0)
        }
        PathSpec::Ellipse { semi_x_l, semi_y_l, waypoints } => {
            positive(semi_x_l, "ellipse semi-axis")?;
            positive(semi_y_l, "ellipse semi-axis")?;
            if waypoints < 3 {
                return Err(invalid("ellipse needs at least 3 waypoints"));
            }
            let n = (waypoints - 1) as f64;
            let pts = (0..waypoints)
                .map(|k| {
                    let th = -TAU * k as f64 / n;
                    Vec2::new(semi_x_l * th.cos(), semi_y_l * th.sin())
                })
                .collect();
            (pts, Vec2::new(semi_x_l, 0.0), -FRAC_PI_2)
        }
        PathSpec::Eight { radius_l, waypoints } => {
            positive(radius_l, "eight radius")?;
            if waypoints < 4 {
                return Err(invalid("eight needs at least 4 waypoints"));
            }
            let n1 = waypoints.div_ceil(2);
            let n2 = waypoints - n1;
            let lower = Vec2::new(0.0, -radius_l);
            let upper = Vec2::new(0.0, radius_l);
            let mut pts = Vec::with_capacity(waypoints);
            for k in 1..=n1 {
                pts.push(lower + Vec2::from_polar(radius_l, FRAC_PI_2 - TAU * k as f64 / n1 as f64));
            }
            for k in 1..=n2 {
                pts.push(upper + Vec2::from_polar(radius_l, -FRAC_PI_2 + TAU * k as f64 / n2 as f64));
            }
            (pts, Vec2::ZERO, 0.0)
        }
        PathSpec::Square { side_l } => {
            positive(side_l, "square side")?;
            let s = side_l;
            let pts = vec![Vec2::ZERO, Vec2::new(s, 0.0), Vec2::new(s, s), Vec2::new(0.0, s), Vec2::ZERO];
            (pts, Vec2::ZERO, 0.0)
        }
    })
}

/// Builds a scenario for `model`; the ship starts at design speed with the
/// propeller at its self-propulsion rate.
pub fn build_scenario(spec: &ScenarioSpec, model: &ShipModel, tolerance_l: f64) -> Result<Scenario> {
    let l = model.length();
    let (pts, start, psi) = path_geometry(&spec.path)?;
    let path = WaypointPath::new(pts.into_iter().map(|p| p * l).collect(), tolerance_l * l)?;
    let wind = match spec.wind {
        Some(w) => {
            if !(w.speed_u >= 0.0 && w.direction_deg_toward.is_finite()) {
                return Err(invalid("wind speed must be non-negative"));
            }
            WindCondition::from_degrees(w.speed_u * model.design_speed(), w.direction_deg_toward)
        }
        None => WindCondition::CALM,
    };
    let origin = match spec.path {
        // The offset case measures convergence onto the x axis.
        PathSpec::Straight { .. } => Vec2::ZERO,
        _ => start * l,
    };
    Ok(Scenario {
        name: spec.name.clone(),
        path,
        wind,
        origin,
        initial: ShipState::straight(start * l, psi, model.design_speed(), model.actuator.n_p),
    })
}

/// One logged control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub psi_rad: f64,
    pub u_mps: f64,
    pub v_mps: f64,
    pub r_radps: f64,
    pub delta_rad: f64,
    pub delta_c_rad: f64,
    #[serde(rename = "d_c_L")]
    pub d_c_l: f64,
    pub chi_e_rad: f64,
    #[serde(rename = "d_wp_L")]
    pub d_wp_l: f64,
    pub active_wp: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub reward_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| invalid(format!("trajectory CSV: {e}")))?;
        }
        if self.rows.is_empty() {
            return Ok(TRAJECTORY_HEADER.join(",") + "\n");
        }
        let bytes = w.into_inner().map_err(|e| invalid(format!("trajectory CSV: {e}")))?;
        String::from_utf8(bytes).map_err(|e| invalid(format!("trajectory CSV: {e}")))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| invalid(format!("trajectory CSV: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != TRAJECTORY_HEADER {
            return Err(invalid(format!("trajectory CSV header mismatch: {header:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()
            .map_err(|e| invalid(format!("trajectory CSV: {e}")))?;
        Ok(Self { rows })
    }
}

pub const TRAJECTORY_HEADER: [&str; 17] = [
    "t_s", "x_m", "y_m", "psi_rad", "u_mps", "v_mps", "r_radps", "delta_rad", "delta_c_rad", "d_c_L", "chi_e_rad",
    "d_wp_L", "active_wp", "r1", "r2", "r3", "reward_total",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub controller: String,
    pub scenario: String,
    pub success: bool,
    pub steps: usize,
    pub waypoints_captured: usize,
    pub waypoints_total: usize,
    /// Time (s) at which each captured waypoint was reached.
    pub capture_times_s: Vec<f64>,
    /// Over every logged step (ship lengths).
    pub rms_cross_track: f64,
    /// From the first waypoint capture onward (ship lengths).
    pub rms_cross_track_post: f64,
    pub max_abs_cross_track_post: f64,
    /// RMS rudder rate (rad/s).
    pub rudder_effort: f64,
    /// RMS rudder angle (rad).
    pub rms_rudder: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// `sqrt(mean(d_c²))` in ship lengths.
pub fn rms_cross_track(rows: &[TrajectoryRow]) -> Result<f64> {
    rms(rows.iter().map(|r| r.d_c_l)).ok_or_else(|| invalid("RMS cross-track of an empty trajectory"))
}

/// RMS of the finite-difference rudder rate.
pub fn rudder_effort(rows: &[TrajectoryRow]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(invalid("rudder effort needs at least two samples"));
    }
    let rates = rows.windows(2).map(|w| (w[1].delta_rad - w[0].delta_rad) / (w[1].t_s - w[0].t_s));
    Ok(rms(rates).unwrap_or(0.0))
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v * v));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Runs `controller` until the final waypoint is captured, the step cap is
/// hit or the integration fails. A failed run keeps its partial trajectory.
pub fn run_scenario(
    scenario: &Scenario,
    controller: &dyn Controller,
    model: &ShipModel,
    wind_model: &WindLoadModel,
    dt: f64,
    step_cap: usize,
) -> Result<(Trajectory, RunMetrics)> {
    if !(dt > 0.0) {
        return Err(invalid("control step must be positive"));
    }
    let wind = (scenario.wind.speed > 0.0).then(|| Wind { condition: scenario.wind, model: *wind_model });
    let mut state = scenario.initial;
    let mut guidance = GuidanceState::default();
    let mut rows = Vec::new();
    let mut captures = Vec::new();
    let mut first_capture_row = None;
    let mut failure = None;
    let mut success = false;
    let mut last_command = state.delta;

    for k in 0..=step_cap {
        let t = k as f64 * dt;
        let before = guidance.active_index;
        let (g, done) = advance_waypoint(state.position(), &scenario.path, guidance);
        guidance = g;
        let newly = guidance.active_index - before + usize::from(done);
        for _ in 0..newly {
            captures.push(t);
        }
        if newly > 0 && first_capture_row.is_none() {
            first_capture_row = Some(rows.len());
        }

        let command = if done || k == step_cap {
            None
        } else {
            let input = ControlInput { state: &state, path: &scenario.path, origin: scenario.origin, model, dt };
            Some(controller.command(&input, &mut guidance)?.delta_c)
        };
        let delta_c = command.unwrap_or(last_command);
        last_command = delta_c;

        let (seg_start, target) = scenario.path.segment(guidance.active_index, scenario.origin);
        let obs = observe_segment(&state, seg_start, target, model);
        let rw = reward(&obs);
        rows.push(TrajectoryRow {
            t_s: t,
            x_m: state.x,
            y_m: state.y,
            psi_rad: state.psi,
            u_mps: state.u,
            v_mps: state.v,
            r_radps: state.r,
            delta_rad: state.delta,
            delta_c_rad: delta_c,
            d_c_l: obs.d_c,
            chi_e_rad: obs.chi_e,
            d_wp_l: obs.d_wp,
            active_wp: guidance.active_index,
            r1: rw.r1,
            r2: rw.r2,
            r3: rw.r3,
            reward_total: rw.total,
        });

        if done {
            success = true;
            break;
        }
        let Some(delta_c) = command else { break };
        match dynamics::step(&state, delta_c, wind.as_ref(), model, dt) {
            Ok(next) => state = next,
            Err(Error::NumericalBlowup { .. }) => {
                failure = Some(format!("numerical blow-up at t = {:.1} s", t + dt));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !success && failure.is_none() {
        failure = Some(format!("step cap of {step_cap} reached"));
    }

    let post = &rows[first_capture_row.unwrap_or(rows.len() - 1)..];
    let metrics = RunMetrics {
        controller: controller.name().to_string(),
        scenario: scenario.name.clone(),
        success,
        steps: rows.len() - 1,
        waypoints_captured: captures.len(),
        waypoints_total: scenario.path.len(),
        capture_times_s: captures,
        rms_cross_track: rms_cross_track(&rows)?,
        rms_cross_track_post: rms_cross_track(post)?,
        max_abs_cross_track_post: post.iter().map(|r| r.d_c_l.abs()).fold(0.0, f64::max),
        rudder_effort: if rows.len() >= 2 { rudder_effort(&rows)? } else { 0.0 },
        rms_rudder: rms(rows.iter().map(|r| r.delta_rad)).unwrap_or(0.0),
        failure,
    };
    Ok((Trajectory { rows }, metrics))
}

/// A-versus-B summary; A is the candidate, B the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub a: RunMetrics,
    pub b: RunMetrics,
    /// `(rms_B − rms_A)/rms_B·100`.
    pub rms_reduction_pct: f64,
    /// `effort_A / effort_B`.
    pub effort_ratio: f64,
    /// False when either run failed.
    pub valid: bool,
}

pub fn rms_reduction_pct(rms_a: f64, rms_b: f64) -> f64 {
    (rms_b - rms_a) / rms_b * 100.0
}

pub fn compare(a: &RunMetrics, b: &RunMetrics) -> ComparisonReport {
    ComparisonReport {
        scenario: a.scenario.clone(),
        a: a.clone(),
        b: b.clone(),
        rms_reduction_pct: rms_reduction_pct(a.rms_cross_track, b.rms_cross_track),
        effort_ratio: a.rudder_effort / b.rudder_effort,
        valid: a.success && b.success,
    }
}
