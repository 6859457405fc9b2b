//! Prime-II non-dimensionalisation.
//!
//! Lengths scale with the ship length `L`, speeds with a reference speed `U`,
//! time with `L/U`. Forces and moments follow the MMG convention
//! `½ρLdU²` and `½ρL²dU²`.

use serde::{Deserialize, Serialize};

use crate::dynamics::ShipPrincipalParams;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityKind {
    Length,
    Speed,
    YawRate,
    Time,
    Force,
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToPrime,
    FromPrime,
}

/// Dimensional value represented by one unit of `kind` in prime-II units.
pub fn prime_ii_scale(kind: QuantityKind, params: &ShipPrincipalParams, u_ref: f64) -> Result<f64> {
    if !(u_ref > 0.0) || !u_ref.is_finite() {
        return Err(invalid(format!("reference speed must be positive, got {u_ref}")));
    }
    let l = params.length;
    if !(l > 0.0) {
        return Err(invalid(format!("ship length must be positive, got {l}")));
    }
    let q = 0.5 * params.rho_water * l * params.draft * u_ref * u_ref;
    Ok(match kind {
        QuantityKind::Length => l,
        QuantityKind::Speed => u_ref,
        QuantityKind::YawRate => u_ref / l,
        QuantityKind::Time => l / u_ref,
        QuantityKind::Force => q,
        QuantityKind::Moment => q * l,
    })
}

pub fn prime_ii_convert(
    value: f64,
    kind: QuantityKind,
    direction: Direction,
    params: &ShipPrincipalParams,
    u_ref: f64,
) -> Result<f64> {
    let scale = prime_ii_scale(kind, params, u_ref)?;
    Ok(match direction {
        Direction::ToPrime => value / scale,
        Direction::FromPrime => value * scale,
    })
}
