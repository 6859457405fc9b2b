//! Constant, uniform wind and the quasi-steady loads it puts on the hull.
//!
//! Load curves are single harmonics of the relative-wind angle `γ`, the
//! direction the apparent air flow moves toward in the body frame
//! (`γ = 0` tailwind, `γ = π` headwind, `γ = π/2` air flowing to port):
//!
//! ```text
//! C_X =  c_x cos γ     (headwind retards)
//! C_Y =  c_y sin γ     (pushes downwind)
//! C_N = -c_n sin 2γ    (bow falls off the wind)
//! ```

use std::ops::{Add, Neg};

use serde::{Deserialize, Serialize};

use crate::dynamics::ShipState;
use crate::geometry::{wrap_angle, Vec2};

/// Dimensional force/moment triple in the body frame (N, N, N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Loads {
    pub x: f64,
    pub y: f64,
    pub n: f64,
}

impl Loads {
    pub const ZERO: Loads = Loads { x: 0.0, y: 0.0, n: 0.0 };
}

impl Add for Loads {
    type Output = Loads;
    fn add(self, rhs: Loads) -> Loads {
        Loads { x: self.x + rhs.x, y: self.y + rhs.y, n: self.n + rhs.n }
    }
}

impl Neg for Loads {
    type Output = Loads;
    fn neg(self) -> Loads {
        Loads { x: -self.x, y: -self.y, n: -self.n }
    }
}

/// True wind. `direction` is where the air blows toward, earth frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindCondition {
    /// m/s, non-negative.
    pub speed: f64,
    /// rad, wrapped to (−π, π].
    pub direction: f64,
}

impl WindCondition {
    pub const CALM: WindCondition = WindCondition { speed: 0.0, direction: 0.0 };

    pub fn new(speed: f64, direction: f64) -> Self {
        Self { speed: speed.max(0.0), direction: wrap_angle(direction) }
    }

    pub fn from_degrees(speed: f64, direction_deg_toward: f64) -> Self {
        Self::new(speed, direction_deg_toward.to_radians())
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindLoadModel {
    pub rho_air: f64,
    /// Frontal projected area above water (m²).
    pub frontal_area: f64,
    /// Lateral projected area above water (m²).
    pub lateral_area: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub c_n: f64,
}

impl Default for WindLoadModel {
    fn default() -> Self {
        // KCS in loaded condition with a full deck stow.
        Self { rho_air: 1.225, frontal_area: 950.0, lateral_area: 3600.0, c_x: 0.9, c_y: 0.95, c_n: 0.2 }
    }
}

impl WindLoadModel {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.rho_air > 0.0 && self.frontal_area > 0.0 && self.lateral_area > 0.0) {
            return Err(crate::error::invalid("wind load model densities and areas must be positive"));
        }
        if ![self.c_x, self.c_y, self.c_n].iter().all(|c| c.is_finite()) {
            return Err(crate::error::invalid("wind load amplitudes must be finite"));
        }
        Ok(())
    }
}

/// Apparent wind seen from the ship.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeWind {
    /// m/s.
    pub speed: f64,
    /// Body-frame direction the apparent air flow moves toward (rad).
    pub angle: f64,
}

pub fn relative_wind(state: &ShipState, wind: &WindCondition) -> RelativeWind {
    let air = wind.velocity() - state.ground_velocity();
    let body = air.rotate(-state.psi);
    let speed = body.norm();
    let angle = if speed == 0.0 { 0.0 } else { wrap_angle(body.angle()) };
    RelativeWind { speed, angle }
}

/// Wind loads for a ship of length `length` (m).
pub fn wind_loads(state: &ShipState, wind: &WindCondition, model: &WindLoadModel, length: f64) -> Loads {
    let rel = relative_wind(state, wind);
    let q = 0.5 * model.rho_air * rel.speed * rel.speed;
    let g = rel.angle;
    Loads {
        x: q * model.frontal_area * model.c_x * g.cos(),
        y: q * model.lateral_area * model.c_y * g.sin(),
        n: -q * model.lateral_area * length * model.c_n * (2.0 * g).sin(),
    }
}

/// A wind condition bundled with the ship's load model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wind {
    pub condition: WindCondition,
    pub model: WindLoadModel,
}

impl Wind {
    pub fn loads(&self, state: &ShipState, length: f64) -> Loads {
        wind_loads(state, &self.condition, &self.model, length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ship(u: f64, psi: f64) -> ShipState {
        ShipState::straight(Vec2::ZERO, psi, u, 0.0)
    }

    #[test]
    fn self_wind_is_headwind() {
        let rel = relative_wind(&ship(6.0, 0.3), &WindCondition::CALM);
        assert!((rel.speed - 6.0).abs() < 1e-12);
        assert!((rel.angle.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn stationary_ship_sees_true_wind() {
        let rel = relative_wind(&ship(0.0, 0.0), &WindCondition::new(7.0, 0.0));
        assert!((rel.speed - 7.0).abs() < 1e-12);
        assert!(rel.angle.abs() < 1e-12);
    }

    #[test]
    fn opposing_wind_adds() {
        let rel = relative_wind(&ship(5.0, 0.0), &WindCondition::new(5.0, PI));
        assert!((rel.speed - 10.0).abs() < 1e-12);
        assert!((rel.angle.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn calm_and_still_gives_no_load() {
        let l = wind_loads(&ship(0.0, 1.0), &WindCondition::CALM, &WindLoadModel::default(), 230.0);
        assert_eq!(l, Loads::ZERO);
    }

    #[test]
    fn head_and_tail_wind_have_no_side_load() {
        let m = WindLoadModel::default();
        for dir in [0.0, PI] {
            let l = wind_loads(&ship(0.0, 0.0), &WindCondition::new(20.0, dir), &m, 230.0);
            assert!(l.y.abs() < 1e-9 * l.x.abs());
            assert!(l.n.abs() < 1e-9 * l.x.abs() * 230.0);
        }
        let tail = wind_loads(&ship(0.0, 0.0), &WindCondition::new(20.0, 0.0), &m, 230.0);
        assert!(tail.x > 0.0);
    }

    #[test]
    fn beam_wind_pinned() {
        // Air flowing to port at 10 m/s over a stationary ship: γ = π/2.
        let m = WindLoadModel::default();
        let l = wind_loads(&ship(0.0, 0.0), &WindCondition::new(10.0, FRAC_PI_2), &m, 230.0);
        // ½·1.225·100·3600·0.95 = 209 475 N; X and N vanish with cos γ and sin 2γ.
        assert!((l.y - 209_475.0).abs() < 1e-6);
        assert!(l.x.abs() < 1e-6);
        assert!(l.n.abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn quadratic_in_relative_speed(speed in 0.1f64..60.0, dir in -3.1f64..3.1, k in 0.1f64..4.0) {
            let m = WindLoadModel::default();
            let a = wind_loads(&ship(0.0, 0.0), &WindCondition::new(speed, dir), &m, 230.0);
            let b = wind_loads(&ship(0.0, 0.0), &WindCondition::new(k * speed, dir), &m, 230.0);
            let k2 = k * k;
            prop_assert!((b.x - k2 * a.x).abs() <= 1e-9 * (1.0 + b.x.abs()));
            prop_assert!((b.y - k2 * a.y).abs() <= 1e-9 * (1.0 + b.y.abs()));
            prop_assert!((b.n - k2 * a.n).abs() <= 1e-9 * (1.0 + b.n.abs()));
        }

        #[test]
        fn mirrored_wind_flips_side_loads(speed in 0.1f64..60.0, dir in -3.1f64..3.1) {
            let m = WindLoadModel::default();
            let a = wind_loads(&ship(0.0, 0.0), &WindCondition::new(speed, dir), &m, 230.0);
            let b = wind_loads(&ship(0.0, 0.0), &WindCondition::new(speed, -dir), &m, 230.0);
            prop_assert!((a.x - b.x).abs() <= 1e-9 * (1.0 + a.x.abs()));
            prop_assert!((a.y + b.y).abs() <= 1e-9 * (1.0 + a.y.abs()));
            prop_assert!((a.n + b.n).abs() <= 1e-9 * (1.0 + a.n.abs()));
        }
    }
}
