use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Modified Casson rheology with an exponential regularisation at low shear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassonParams {
    /// Haematocrit in percent.
    pub hematocrit: f64,
    /// Regularisation constant, seconds.
    pub m: f64,
}

impl Default for CassonParams {
    fn default() -> Self {
        CassonParams { hematocrit: 40.0, m: 100.0 }
    }
}

impl CassonParams {
    /// Yield stress, Pa.
    pub fn yield_stress(&self) -> f64 {
        (0.888 * self.hematocrit - 23.753) * 1e-3
    }

    /// High-shear (Newtonian) viscosity, Pa·s.
    pub fn plateau_viscosity(&self) -> f64 {
        (0.073 * self.hematocrit + 0.599) * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.yield_stress() > 0.0) || !(self.plateau_viscosity() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "haematocrit {} gives a non-positive yield stress or viscosity",
                self.hematocrit
            )));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularisation constant {} must be positive", self.m)));
        }
        Ok(())
    }
}

/// Apparent viscosity (Pa·s) at shear rate `shear_rate` (1/s). Zero shear
/// returns the regularised plateau `(sqrt(tau0 * m) + sqrt(mu0))^2`.
pub fn casson_viscosity(shear_rate: f64, params: &CassonParams) -> Result<f64> {
    params.validate()?;
    if !(shear_rate >= 0.0) || !shear_rate.is_finite() {
        return Err(Error::InvalidArgument(format!("shear rate {shear_rate} must be finite and non-negative")));
    }
    let m = params.m;
    // (1 - exp(-m g)) / g without cancellation near zero.
    let ramp = if shear_rate == 0.0 { m } else { -(-m * shear_rate).exp_m1() / shear_rate };
    let root = (params.yield_stress() * ramp).sqrt() + params.plateau_viscosity().sqrt();
    Ok(root * root)
}
