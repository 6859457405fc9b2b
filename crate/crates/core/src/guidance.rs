//! Waypoint bookkeeping, path-relative error signals and the ILOS
//! desired-heading law.
//!
//! Cross-track error is signed starboard-positive: positive when the ship
//! lies to the right of the segment direction. Since headings are
//! counter-clockwise positive, ILOS steers a starboard offset back by
//! *increasing* the desired heading.

use serde::{Deserialize, Serialize};

use crate::dynamics::ShipState;
use crate::error::{invalid, Result};
use crate::geometry::{wrap_angle, Vec2};

/// Ordered waypoints; the segment to waypoint 0 starts at the run origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub points: Vec<Vec2>,
    /// Capture radius (m).
    pub acceptance_radius: f64,
}

impl WaypointPath {
    pub fn new(points: Vec<Vec2>, acceptance_radius: f64) -> Result<Self> {
        let path = Self { points, acceptance_radius };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(invalid("waypoint path needs at least one point"));
        }
        if !(self.acceptance_radius > 0.0) {
            return Err(invalid("acceptance radius must be positive"));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(invalid("waypoints must be finite"));
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("consecutive waypoints must be distinct"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    /// Segment ending at waypoint `index`.
    pub fn segment(&self, index: usize, origin: Vec2) -> (Vec2, Vec2) {
        let end = self.points[index];
        let start = if index == 0 { origin } else { self.points[index - 1] };
        (start, end)
    }

    /// One `x_m,y_m` row per waypoint, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_m,y_m\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.x, p.y));
        }
        out
    }

    pub fn from_csv(text: &str, acceptance_radius: f64) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> Result<f64> {
                cols.next()
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| invalid(format!("path CSV line {}: expected x_m,y_m", i + 1)))
            };
            points.push(Vec2::new(next()?, next()?));
        }
        Self::new(points, acceptance_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GuidanceState {
    pub active_index: usize,
    /// ILOS integral state (m).
    pub y_int: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlosParams {
    /// Lookahead distance in ship lengths.
    pub lookahead_l: f64,
    pub integral_gain: f64,
}

impl Default for IlosParams {
    fn default() -> Self {
        Self { lookahead_l: 1.5, integral_gain: 0.2 }
    }
}

/// Signed distance from `pos` to the line through the segment,
/// starboard-positive.
pub fn cross_track_error(pos: Vec2, seg_start: Vec2, seg_end: Vec2) -> Result<f64> {
    let dir = seg_end - seg_start;
    let len = dir.norm();
    if !(len > 0.0) {
        return Err(invalid("degenerate path segment"));
    }
    Ok(-dir.cross(pos - seg_start) / len)
}

/// Bearing to `target` minus course over ground, wrapped to (−π, π].
/// At zero ground speed the heading stands in for the course.
pub fn course_error(state: &ShipState, target: Vec2) -> f64 {
    let bearing = (target - state.position()).angle();
    let ground = state.ground_velocity();
    let course = if ground.norm() > 1e-9 { ground.angle() } else { state.psi };
    wrap_angle(bearing - course)
}

pub fn distance_to_waypoint(pos: Vec2, target: Vec2) -> f64 {
    pos.distance(target)
}

/// Desired heading toward the active segment and the updated guidance state.
///
/// `ψ_d = α + atan((d_c + κ·y_int)/Δ)` with
/// `ẏ_int = U·Δ·d_c / (Δ² + (d_c + κ·y_int)²)`, integrated by forward Euler
/// and clamped so that `|κ·y_int| ≤ Δ`.
pub fn ilos_desired_heading(
    state: &ShipState,
    path: &WaypointPath,
    origin: Vec2,
    gstate: GuidanceState,
    params: &IlosParams,
    length: f64,
    dt: f64,
) -> Result<(f64, GuidanceState)> {
    let (start, end) = path.segment(gstate.active_index, origin);
    let azimuth = (end - start).angle();
    let d_c = cross_track_error(state.position(), start, end)?;
    let lookahead = params.lookahead_l * length;
    let kappa = params.integral_gain;

    let e = d_c + kappa * gstate.y_int;
    let psi_d = wrap_angle(azimuth + (e / lookahead).atan());

    let speed = state.ground_velocity().norm();
    let mut y_int = gstate.y_int + dt * speed * lookahead * d_c / (lookahead * lookahead + e * e);
    if kappa > 0.0 {
        let bound = lookahead / kappa;
        y_int = y_int.clamp(-bound, bound);
    }
    Ok((psi_d, GuidanceState { y_int, ..gstate }))
}

/// Advances past every waypoint strictly inside the capture radius. The
/// integral state restarts on each new segment.
pub fn advance_waypoint(pos: Vec2, path: &WaypointPath, gstate: GuidanceState) -> (GuidanceState, bool) {
    let mut g = gstate;
    loop {
        if pos.distance(path.points[g.active_index]) < path.acceptance_radius {
            if g.active_index == path.last_index() {
                return (g, true);
            }
            g.active_index += 1;
            g.y_int = 0.0;
        } else {
            return (g, false);
        }
    }
}
