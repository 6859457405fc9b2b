//! Three-degree-of-freedom MMG maneuvering model.
//!
//! Hull, propeller and rudder forces follow the MMG standard method
//! (midship origin, prime-II non-dimensional hull derivatives). The frame is
//! right-handed with the earth `z` axis up: heading `ψ` is measured from the
//! earth `x` axis, counter-clockwise positive, the body `y` axis points to
//! port and positive yaw rate turns the bow to port. Under this frame the
//! MMG equations keep their textbook form because the hull polynomials are
//! even (surge) or odd (sway, yaw) in `(v, r)`.
//!
//! Positive rudder angle produces a positive yaw moment, i.e. a turn that
//! increases `ψ`.

use serde::{Deserialize, Serialize};

use crate::disturbance::{Loads, Wind};
use crate::error::{invalid, Error, Result};
use crate::geometry::{wrap_angle, Vec2};

const KCS_JSON: &str = include_str!("../data/kcs.json");

/// Speeds below this are treated as zero when forming prime-II ratios.
const SPEED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipPrincipalParams {
    /// Length between perpendiculars (m).
    #[serde(rename = "L")]
    pub length: f64,
    /// Beam (m).
    #[serde(rename = "B")]
    pub beam: f64,
    /// Draft (m).
    #[serde(rename = "d")]
    pub draft: f64,
    /// Displaced volume (m³).
    pub displacement: f64,
    /// Longitudinal centre of gravity from midships, forward positive (m).
    #[serde(rename = "x_G")]
    pub x_g: f64,
    /// Design (service) speed (m/s).
    #[serde(rename = "U_design")]
    pub design_speed: f64,
    /// Water density (kg/m³).
    pub rho_water: f64,
}

/// Non-dimensional MMG coefficients. Masses are normalised by `½ρL²d`,
/// inertias by `½ρL⁴d`; lengths marked `x_*`/`l_R` by `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmgCoefficients {
    #[serde(rename = "m")]
    pub mass: f64,
    #[serde(rename = "m_x")]
    pub added_mass_x: f64,
    #[serde(rename = "m_y")]
    pub added_mass_y: f64,
    #[serde(rename = "J_z")]
    pub added_inertia_z: f64,
    #[serde(rename = "I_zz")]
    pub inertia_zz: f64,

    #[serde(rename = "R_0")]
    pub r0: f64,
    #[serde(rename = "X_vv")]
    pub x_vv: f64,
    #[serde(rename = "X_vr")]
    pub x_vr: f64,
    #[serde(rename = "X_rr")]
    pub x_rr: f64,
    #[serde(rename = "X_vvvv")]
    pub x_vvvv: f64,
    #[serde(rename = "Y_v")]
    pub y_v: f64,
    #[serde(rename = "Y_r")]
    pub y_r: f64,
    #[serde(rename = "Y_vvv")]
    pub y_vvv: f64,
    #[serde(rename = "Y_vvr")]
    pub y_vvr: f64,
    #[serde(rename = "Y_vrr")]
    pub y_vrr: f64,
    #[serde(rename = "Y_rrr")]
    pub y_rrr: f64,
    #[serde(rename = "N_v")]
    pub n_v: f64,
    #[serde(rename = "N_r")]
    pub n_r: f64,
    #[serde(rename = "N_vvv")]
    pub n_vvv: f64,
    #[serde(rename = "N_vvr")]
    pub n_vvr: f64,
    #[serde(rename = "N_vrr")]
    pub n_vrr: f64,
    #[serde(rename = "N_rrr")]
    pub n_rrr: f64,

    /// Propeller diameter (m).
    #[serde(rename = "D_p")]
    pub prop_diameter: f64,
    #[serde(rename = "t_P")]
    pub thrust_deduction: f64,
    #[serde(rename = "w_P0")]
    pub wake_fraction: f64,
    #[serde(rename = "k_0")]
    pub kt0: f64,
    #[serde(rename = "k_1")]
    pub kt1: f64,
    #[serde(rename = "k_2")]
    pub kt2: f64,
    /// Wake-change exponent against the propeller inflow angle.
    #[serde(rename = "C_1")]
    pub wake_c1: f64,
    /// Asymptotic wake-change factor; a single value keeps the model
    /// port/starboard symmetric.
    #[serde(rename = "C_2")]
    pub wake_c2: f64,
    #[serde(rename = "x_P")]
    pub x_p: f64,

    /// Rudder profile area (m²).
    #[serde(rename = "A_R")]
    pub rudder_area: f64,
    #[serde(rename = "Lambda")]
    pub aspect_ratio: f64,
    #[serde(rename = "f_alpha")]
    pub f_alpha: f64,
    pub epsilon: f64,
    pub kappa: f64,
    #[serde(rename = "t_R")]
    pub t_r: f64,
    #[serde(rename = "a_H")]
    pub a_h: f64,
    #[serde(rename = "x_H")]
    pub x_h: f64,
    #[serde(rename = "x_R")]
    pub x_r: f64,
    #[serde(rename = "gamma_R")]
    pub gamma_r: f64,
    #[serde(rename = "l_R")]
    pub l_r: f64,
}

impl MmgCoefficients {
    pub fn thrust_coefficient(&self, advance_ratio: f64) -> f64 {
        self.kt0 + self.kt1 * advance_ratio + self.kt2 * advance_ratio * advance_ratio
    }

    /// Rudder span from area and aspect ratio.
    pub fn rudder_span(&self) -> f64 {
        (self.aspect_ratio * self.rudder_area).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorParams {
    pub delta_max_deg: f64,
    pub delta_rate_max_deg_s: f64,
    /// Propeller rate held for every run (rev/s).
    pub n_p: f64,
}

impl ActuatorParams {
    pub fn delta_max(&self) -> f64 {
        self.delta_max_deg.to_radians()
    }

    pub fn delta_rate_max(&self) -> f64 {
        self.delta_rate_max_deg_s.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipModel {
    pub principal: ShipPrincipalParams,
    pub mmg: MmgCoefficients,
    pub actuator: ActuatorParams,
}

impl ShipModel {
    /// KCS container ship defaults shipped in `data/kcs.json`.
    pub fn kcs() -> Self {
        serde_json::from_str(KCS_JSON).expect("embedded KCS coefficient file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ShipModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn length(&self) -> f64 {
        self.principal.length
    }

    pub fn design_speed(&self) -> f64 {
        self.principal.design_speed
    }

    /// Dimensional duration of one prime-II time unit at design speed.
    pub fn time_scale(&self) -> f64 {
        self.principal.length / self.principal.design_speed
    }

    /// Advance ratio at design speed in straight running.
    pub fn design_advance_ratio(&self) -> f64 {
        self.principal.design_speed * (1.0 - self.mmg.wake_fraction)
            / (self.actuator.n_p * self.mmg.prop_diameter)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.principal;
        for (name, v) in [
            ("L", p.length),
            ("B", p.beam),
            ("d", p.draft),
            ("displacement", p.displacement),
            ("U_design", p.design_speed),
            ("rho_water", p.rho_water),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("principal.{name} must be positive and finite, got {v}")));
            }
        }
        if !(p.x_g.abs() < 0.5 * p.length) {
            return Err(invalid(format!("|x_G| must be below L/2, got {}", p.x_g)));
        }

        let c = &self.mmg;
        let all = serde_json::to_value(c)?;
        if let Some(map) = all.as_object() {
            for (k, v) in map {
                if !v.as_f64().is_some_and(f64::is_finite) {
                    return Err(invalid(format!("mmg.{k} must be finite")));
                }
            }
        }
        for (name, v) in [
            ("D_p", c.prop_diameter),
            ("A_R", c.rudder_area),
            ("Lambda", c.aspect_ratio),
            ("f_alpha", c.f_alpha),
            ("m", c.mass),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("mmg.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("t_P", c.thrust_deduction), ("w_P0", c.wake_fraction), ("t_R", c.t_r)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(format!("mmg.{name} must lie in [0, 1), got {v}")));
            }
        }

        let a = &self.actuator;
        if !(a.delta_max_deg > 0.0 && a.delta_max_deg <= 90.0) {
            return Err(invalid("actuator.delta_max_deg must lie in (0, 90]"));
        }
        if !(a.delta_rate_max_deg_s > 0.0) {
            return Err(invalid("actuator.delta_rate_max_deg_s must be positive"));
        }
        if !(a.n_p >= 0.0 && a.n_p.is_finite()) {
            return Err(invalid("actuator.n_p must be non-negative"));
        }
        if a.n_p > 0.0 {
            // Operating range: bollard pull up to 10 % beyond the design point.
            let j_max = 1.1 * self.design_advance_ratio();
            for i in 0..=20 {
                let j = j_max * i as f64 / 20.0;
                if c.thrust_coefficient(j) <= 0.0 {
                    return Err(invalid(format!("K_T({j:.3}) is not positive on the operating range")));
                }
            }
        }

        let (m11, m12, m22) = self.mass_matrix_yaw_sway();
        if (m11 * m22 - m12 * m12).abs() < 1e-12 * m11 * m22 {
            return Err(invalid("sway/yaw mass matrix is singular"));
        }
        Ok(())
    }

    fn mass_dim(&self) -> (f64, f64, f64, f64, f64) {
        let p = &self.principal;
        let c = &self.mmg;
        let q2 = 0.5 * p.rho_water * p.length * p.length * p.draft;
        let q4 = q2 * p.length * p.length;
        (c.mass * q2, c.added_mass_x * q2, c.added_mass_y * q2, c.inertia_zz * q4, c.added_inertia_z * q4)
    }

    fn mass_matrix_yaw_sway(&self) -> (f64, f64, f64) {
        let (m, _mx, my, izg, jz) = self.mass_dim();
        let xg = self.principal.x_g;
        (m + my, xg * m, izg + xg * xg * m + jz)
    }
}

/// Integrated ship state. Velocities are in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShipState {
    pub x: f64,
    pub y: f64,
    /// Heading (rad), wrapped to (−π, π].
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    /// Actual rudder angle (rad).
    pub delta: f64,
    /// Propeller rate (rev/s).
    pub n_p: f64,
}

impl ShipState {
    /// Straight running along the heading at speed `u`, rudder amidships.
    pub fn straight(position: Vec2, psi: f64, u: f64, n_p: f64) -> Self {
        Self { x: position.x, y: position.y, psi: wrap_angle(psi), u, v: 0.0, r: 0.0, delta: 0.0, n_p }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Velocity over ground in the earth frame.
    pub fn ground_velocity(&self) -> Vec2 {
        let (s, c) = self.psi.sin_cos();
        Vec2::new(self.u * c - self.v * s, self.u * s + self.v * c)
    }

    pub fn speed(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.u, self.v, self.r, self.delta, self.n_p]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Mirror image about the earth `x` axis.
    pub fn mirrored(&self) -> Self {
        Self { y: -self.y, psi: wrap_angle(-self.psi), v: -self.v, r: -self.r, delta: -self.delta, ..*self }
    }
}

/// Non-dimensional force triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrimeForces {
    pub x: f64,
    pub y: f64,
    pub n: f64,
}

/// Hull forces including straight-running resistance.
pub fn hull_forces(v: f64, r: f64, c: &MmgCoefficients) -> PrimeForces {
    let (v2, r2) = (v * v, r * r);
    PrimeForces {
        x: -c.r0 + c.x_vv * v2 + c.x_vr * v * r + c.x_rr * r2 + c.x_vvvv * v2 * v2,
        y: c.y_v * v + c.y_r * r + c.y_vvv * v2 * v + c.y_vvr * v2 * r + c.y_vrr * v * r2 + c.y_rrr * r2 * r,
        n: c.n_v * v + c.n_r * r + c.n_vvv * v2 * v + c.n_vvr * v2 * r + c.n_vrr * v * r2 + c.n_rrr * r2 * r,
    }
}

/// Propeller operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropellerState {
    /// Thrust (N).
    pub thrust: f64,
    /// Effective wake fraction at the propeller.
    pub wake_fraction: f64,
    /// Advance ratio; infinite when the propeller is stopped.
    pub advance_ratio: f64,
}

/// Thrust from the advance ratio and `K_T` polynomial; the effective wake
/// drops with the local inflow angle at the propeller.
pub fn propeller_thrust(
    u: f64,
    v_prime: f64,
    r_prime: f64,
    n_p: f64,
    c: &MmgCoefficients,
    p: &ShipPrincipalParams,
) -> PropellerState {
    let beta = -v_prime.clamp(-1.0, 1.0).asin();
    let beta_p = beta - c.x_p * r_prime;
    let one_minus_w = (1.0 - c.wake_fraction) * (1.0 + (1.0 - (-c.wake_c1 * beta_p.abs()).exp()) * (c.wake_c2 - 1.0));
    let wake_fraction = 1.0 - one_minus_w;
    if n_p <= 0.0 {
        return PropellerState { thrust: 0.0, wake_fraction, advance_ratio: f64::INFINITY };
    }
    let dp = c.prop_diameter;
    let j = u * one_minus_w / (n_p * dp);
    let kt = c.thrust_coefficient(j);
    PropellerState { thrust: p.rho_water * n_p * n_p * dp.powi(4) * kt, wake_fraction, advance_ratio: j }
}

/// Instantaneous speed and prime-II sway/yaw rates; zero ratios at rest.
fn prime_rates(state: &ShipState, length: f64) -> (f64, f64, f64) {
    let speed = state.speed();
    if speed < SPEED_EPS {
        (speed, 0.0, 0.0)
    } else {
        (speed, state.v / speed, state.r * length / speed)
    }
}

/// Rudder forces (N, N, N·m about midships).
pub fn rudder_forces(state: &ShipState, prop: &PropellerState, model: &ShipModel) -> Loads {
    let c = &model.mmg;
    let p = &model.principal;
    let (speed, v_prime, r_prime) = prime_rates(state, p.length);
    let beta = -v_prime.clamp(-1.0, 1.0).asin();

    let eta = c.prop_diameter / c.rudder_span();
    let u_p = state.u * (1.0 - prop.wake_fraction);
    // u_P·sqrt(1 + 8K_T/(πJ²)) written through the thrust so it stays finite at J = 0.
    let race = (u_p * u_p + 8.0 * prop.thrust / (p.rho_water * std::f64::consts::PI * c.prop_diameter.powi(2)))
        .max(0.0)
        .sqrt();
    let slipstream = u_p * (1.0 - c.kappa) + c.kappa * race;
    let u_r = c.epsilon * (eta * slipstream * slipstream + (1.0 - eta) * u_p * u_p).sqrt();
    let beta_r = beta - c.l_r * r_prime;
    let v_r = speed * c.gamma_r * beta_r;
    let alpha_r = state.delta - v_r.atan2(u_r);
    let f_n = 0.5 * p.rho_water * c.rudder_area * (u_r * u_r + v_r * v_r) * c.f_alpha * alpha_r.sin();

    let (sd, cd) = state.delta.sin_cos();
    Loads {
        x: -(1.0 - c.t_r) * f_n * sd,
        y: -(1.0 + c.a_h) * f_n * cd,
        n: -(c.x_r + c.a_h * c.x_h) * p.length * f_n * cd,
    }
}

/// Rudder forces in prime-II units referenced to `u_ref`.
pub fn rudder_forces_prime(state: &ShipState, prop: &PropellerState, model: &ShipModel, u_ref: f64) -> PrimeForces {
    let loads = rudder_forces(state, prop, model);
    let p = &model.principal;
    let q = 0.5 * p.rho_water * p.length * p.draft * u_ref * u_ref;
    PrimeForces { x: loads.x / q, y: loads.y / q, n: loads.n / (q * p.length) }
}

/// Time derivative of `(x, y, ψ, u, v, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

/// Sum of hull, propeller and rudder loads for the given state.
pub fn calm_water_loads(state: &ShipState, model: &ShipModel) -> Loads {
    let p = &model.principal;
    let c = &model.mmg;
    let (speed, v_prime, r_prime) = prime_rates(state, p.length);
    let hull = hull_forces(v_prime, r_prime, c);
    let q = 0.5 * p.rho_water * p.length * p.draft * speed * speed;
    let prop = propeller_thrust(state.u, v_prime, r_prime, state.n_p, c, p);
    let rudder = rudder_forces(state, &prop, model);
    Loads {
        x: q * hull.x + (1.0 - c.thrust_deduction) * prop.thrust + rudder.x,
        y: q * hull.y + rudder.y,
        n: q * p.length * hull.n + rudder.n,
    }
}

pub fn state_derivative(state: &ShipState, external: Loads, model: &ShipModel) -> Result<StateDerivative> {
    let loads = calm_water_loads(state, model) + external;
    let (m, mx, my, izg, jz) = model.mass_dim();
    let xg = model.principal.x_g;
    let ShipState { u, v, r, psi, .. } = *state;

    let u_dot = (loads.x + (m + my) * v * r + xg * m * r * r) / (m + mx);
    // [ m+m_y        x_G m             ] [v̇]   [ Y − (m+m_x) u r ]
    // [ x_G m   I_zG + x_G² m + J_z    ] [ṙ] = [ N − x_G m u r   ]
    let (a11, a12, a22) = (m + my, xg * m, izg + xg * xg * m + jz);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 * a11 * a22 {
        return Err(invalid("sway/yaw mass matrix is singular"));
    }
    let b1 = loads.y - (m + mx) * u * r;
    let b2 = loads.n - xg * m * u * r;
    let v_dot = (a22 * b1 - a12 * b2) / det;
    let r_dot = (a11 * b2 - a12 * b1) / det;

    let (s, c) = psi.sin_cos();
    Ok(StateDerivative { x: u * c - v * s, y: u * s + v * c, psi: r, u: u_dot, v: v_dot, r: r_dot })
}

/// External loads for a state; `None` is calm air.
fn external_loads(state: &ShipState, wind: Option<&Wind>, length: f64) -> Loads {
    wind.map_or(Loads::ZERO, |w| w.loads(state, length))
}

fn offset(state: &ShipState, k: &StateDerivative, h: f64) -> ShipState {
    ShipState {
        x: state.x + h * k.x,
        y: state.y + h * k.y,
        psi: state.psi + h * k.psi,
        u: state.u + h * k.u,
        v: state.v + h * k.v,
        r: state.r + h * k.r,
        ..*state
    }
}

/// Rudder angle after slewing toward the (clamped) command for `dt` seconds.
pub fn slew_rudder(delta: f64, delta_c: f64, actuator: &ActuatorParams, dt: f64) -> f64 {
    let max = actuator.delta_max();
    let target = delta_c.clamp(-max, max);
    let travel = actuator.delta_rate_max() * dt;
    (delta + (target - delta).clamp(-travel, travel)).clamp(-max, max)
}

/// Advances the ship by `dt` seconds: the rudder slews first, then classic
/// RK4 integrates the rigid-body states with the rudder held.
pub fn step(state: &ShipState, delta_c: f64, wind: Option<&Wind>, model: &ShipModel, dt: f64) -> Result<ShipState> {
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let delta_c = if delta_c.is_nan() { state.delta } else { delta_c };
    let mut s0 = *state;
    s0.delta = slew_rudder(state.delta, delta_c, &model.actuator, dt);

    let l = model.principal.length;
    let f = |s: &ShipState| state_derivative(s, external_loads(s, wind, l), model);
    let k1 = f(&s0)?;
    let k2 = f(&offset(&s0, &k1, 0.5 * dt))?;
    let k3 = f(&offset(&s0, &k2, 0.5 * dt))?;
    let k4 = f(&offset(&s0, &k3, dt))?;
    let w = dt / 6.0;
    let next = ShipState {
        x: s0.x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: s0.y + w * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        psi: wrap_angle(s0.psi + w * (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi)),
        u: s0.u + w * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u),
        v: s0.v + w * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        r: s0.r + w * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
        ..s0
    };
    if !next.is_finite() {
        return Err(Error::NumericalBlowup { state: Box::new(next) });
    }
    Ok(next)
}
