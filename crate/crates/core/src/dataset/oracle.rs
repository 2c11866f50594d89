//! Closed-form inductance and quality factor of planar spiral coils.
//!
//! Inductance uses the current-sheet expression for circular spirals and
//! the modified Wheeler expression for square ones. Resistance is DC
//! resistance scaled by a clamped skin-effect factor; proximity effect is
//! not modelled.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0 * PI * 1e-7;
/// Resistivity of annealed copper at room temperature, Ω·m.
pub const COPPER_RESISTIVITY: f64 = 1.68e-8;
/// Core-loss penalty on the AC resistance of coils with a core.
pub const CORE_LOSS_FACTOR: f64 = 1.2;

const CURRENT_SHEET_C1: f64 = 2.46;
const CURRENT_SHEET_C2: f64 = 0.20;
const WHEELER_K1: f64 = 2.34;
const WHEELER_K2: f64 = 2.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoilShape {
    Circular,
    Square,
}

/// A flat spiral wound from round wire. Lengths are in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilGeometry {
    pub shape: CoilShape,
    pub turns: u32,
    pub outer_diameter: f64,
    pub inner_diameter: f64,
    pub wire_radius: f64,
    pub has_core: bool,
    /// Effective relative permeability of the core; ignored without one.
    pub core_mu_eff: f64,
    pub resistivity: f64,
}

impl CoilGeometry {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.outer_diameter,
            self.inner_diameter,
            self.wire_radius,
            self.core_mu_eff,
            self.resistivity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Geometry("all dimensions must be finite".into()));
        }
        if self.turns == 0 {
            return Err(Error::Geometry("at least one turn is required".into()));
        }
        if !(self.inner_diameter > 0.0 && self.inner_diameter < self.outer_diameter) {
            return Err(Error::Geometry(format!(
                "need 0 < inner diameter < outer diameter, got {} and {}",
                self.inner_diameter, self.outer_diameter
            )));
        }
        if self.wire_radius <= 0.0 {
            return Err(Error::Geometry(format!("wire radius must be positive, got {}", self.wire_radius)));
        }
        let winding_width = (self.outer_diameter - self.inner_diameter) / 2.0;
        if 2.0 * self.wire_radius * self.turns as f64 > winding_width {
            return Err(Error::Geometry(format!(
                "{} turns of {} m radius wire do not fit in a {} m wide winding",
                self.turns, self.wire_radius, winding_width
            )));
        }
        if self.core_mu_eff < 1.0 {
            return Err(Error::Geometry(format!("core permeability must be ≥ 1, got {}", self.core_mu_eff)));
        }
        if self.resistivity <= 0.0 {
            return Err(Error::Geometry(format!("resistivity must be positive, got {}", self.resistivity)));
        }
        Ok(())
    }

    pub fn average_diameter(&self) -> f64 {
        (self.outer_diameter + self.inner_diameter) / 2.0
    }

    pub fn fill_ratio(&self) -> f64 {
        (self.outer_diameter - self.inner_diameter) / (self.outer_diameter + self.inner_diameter)
    }

    /// Length of the wound wire.
    pub fn wire_length(&self) -> f64 {
        let n = self.turns as f64;
        match self.shape {
            CoilShape::Circular => n * PI * self.average_diameter(),
            CoilShape::Square => 4.0 * n * self.average_diameter(),
        }
    }
}

/// Skin depth `√(2ρ / (ωµ0))` in metres.
pub fn skin_depth(resistivity: f64, freq_hz: f64) -> f64 {
    (2.0 * resistivity / (2.0 * PI * freq_hz * MU0)).sqrt()
}

/// Inductance in henries.
pub fn oracle_inductance(g: &CoilGeometry) -> Result<f64> {
    g.validate()?;
    let n2 = (g.turns as f64).powi(2);
    let d_avg = g.average_diameter();
    let rho = g.fill_ratio();
    let air = match g.shape {
        CoilShape::Circular => MU0 * n2 * d_avg / 2.0 * ((CURRENT_SHEET_C1 / rho).ln() + CURRENT_SHEET_C2 * rho * rho),
        CoilShape::Square => WHEELER_K1 * MU0 * n2 * d_avg / (1.0 + WHEELER_K2 * rho),
    };
    Ok(if g.has_core { air * g.core_mu_eff } else { air })
}

/// Series AC resistance in ohms.
pub fn ac_resistance(g: &CoilGeometry, freq_hz: f64) -> Result<f64> {
    g.validate()?;
    check_frequency(freq_hz)?;
    let r_dc = g.resistivity * g.wire_length() / (PI * g.wire_radius * g.wire_radius);
    let skin = (g.wire_radius / (2.0 * skin_depth(g.resistivity, freq_hz))).max(1.0);
    let r_ac = r_dc * skin;
    Ok(if g.has_core { r_ac * CORE_LOSS_FACTOR } else { r_ac })
}

/// Quality factor `ωL / R_ac`.
pub fn oracle_quality(g: &CoilGeometry, freq_hz: f64) -> Result<f64> {
    let r_ac = ac_resistance(g, freq_hz)?;
    Ok(2.0 * PI * freq_hz * oracle_inductance(g)? / r_ac)
}

fn check_frequency(freq_hz: f64) -> Result<()> {
    if freq_hz.is_finite() && freq_hz > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("oracle_quality", format!("frequency must be positive, got {freq_hz}")))
    }
}
