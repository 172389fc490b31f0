//! Energy measurement and efficiency analytics: run metrics,
//! Greenup/Powerup/Speedup ratios, energy-zone classification, and
//! carbon-equivalence reporting.

pub mod fixtures;
pub mod meter;
pub mod quadrant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wall time, energy and average power of one run. The triple is kept
/// self-consistent: P equals E over T within 0.5%.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub label: String,
    pub wall_time_s: f64,
    pub energy_kwh: f64,
    pub avg_power_kw: f64,
}

impl RunMetrics {
    /// Build from time and energy, deriving the power.
    pub fn from_time_energy(
        label: impl Into<String>,
        wall_time_s: f64,
        energy_kwh: f64,
    ) -> Result<Self> {
        if wall_time_s <= 0.0 {
            return Err(Error::Domain("wall time must be positive".into()));
        }
        if energy_kwh < 0.0 {
            return Err(Error::Domain("energy must be non-negative".into()));
        }
        Ok(RunMetrics {
            label: label.into(),
            wall_time_s,
            energy_kwh,
            avg_power_kw: energy_kwh / (wall_time_s / 3600.0),
        })
    }

    /// Validate a complete triple.
    pub fn validate(&self) -> Result<()> {
        if self.wall_time_s <= 0.0 || self.energy_kwh < 0.0 || self.avg_power_kw < 0.0 {
            return Err(Error::Domain(format!(
                "run '{}' has a non-positive metric",
                self.label
            )));
        }
        let derived = self.energy_kwh / (self.wall_time_s / 3600.0);
        if derived > 0.0 {
            let rel = (self.avg_power_kw - derived).abs() / derived;
            if rel > 0.005 {
                return Err(Error::Domain(format!(
                    "run '{}': power {} kW inconsistent with E/T = {derived} kW",
                    self.label, self.avg_power_kw
                )));
            }
        }
        Ok(())
    }
}

/// Speedup/Powerup/Greenup of a candidate run over a baseline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GpsUp {
    /// Baseline time over candidate time.
    pub speedup: f64,
    /// Candidate power over baseline power; values below 1 mean the
    /// candidate draws less power.
    pub powerup: f64,
    /// speedup / powerup; equals the energy ratio for consistent triples.
    pub greenup: f64,
}

pub fn gps_up(baseline: &RunMetrics, candidate: &RunMetrics) -> Result<GpsUp> {
    for m in [baseline, candidate] {
        if m.wall_time_s <= 0.0 || m.avg_power_kw <= 0.0 {
            return Err(Error::Domain(format!(
                "run '{}' needs positive time and power",
                m.label
            )));
        }
    }
    let speedup = baseline.wall_time_s / candidate.wall_time_s;
    let powerup = candidate.avg_power_kw / baseline.avg_power_kw;
    Ok(GpsUp {
        speedup,
        powerup,
        greenup: speedup / powerup,
    })
}

/// Round to 2 decimals, half away from zero (table presentation style).
pub fn display_2dp(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

/// Energy-efficiency zones from the sign pattern of
/// (speedup - 1, powerup - 1, greenup - 1). Boundary values group with
/// the non-strict side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    GreenSpeedDriven,
    GreenFasterLowerPower,
    GreenPowerSavingDespiteSlowdown,
    RedPowerDominated,
    RedSlowerAndMorePower,
    RedSlowdownDominated,
}

impl Zone {
    pub fn label(&self) -> &'static str {
        match self {
            Zone::GreenSpeedDriven => "green: speed-driven (top-right)",
            Zone::GreenFasterLowerPower => "green: faster-and-lower-power (bottom-right)",
            Zone::GreenPowerSavingDespiteSlowdown => "green: power-saving-despite-slowdown",
            Zone::RedPowerDominated => "red: power-dominated (top-right)",
            Zone::RedSlowerAndMorePower => "red: slower-and-more-power",
            Zone::RedSlowdownDominated => "red: slowdown-dominated",
        }
    }

    pub fn is_green(&self) -> bool {
        matches!(
            self,
            Zone::GreenSpeedDriven
                | Zone::GreenFasterLowerPower
                | Zone::GreenPowerSavingDespiteSlowdown
        )
    }
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Total over all finite positive triples: every input lands in exactly
/// one zone.
pub fn classify_zone(g: &GpsUp) -> Zone {
    let (s, p, gr) = (g.speedup, g.powerup, g.greenup);
    if s > 1.0 {
        if p <= 1.0 {
            Zone::GreenFasterLowerPower
        } else if gr > 1.0 {
            Zone::GreenSpeedDriven
        } else {
            Zone::RedPowerDominated
        }
    } else if p >= 1.0 {
        Zone::RedSlowerAndMorePower
    } else if gr > 1.0 {
        Zone::GreenPowerSavingDespiteSlowdown
    } else {
        Zone::RedSlowdownDominated
    }
}

/// Emission and equivalence factors, echoed into every report so each
/// line item is auditable as a plain ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarbonFactors {
    /// kg CO2 per kWh consumed.
    pub emission_kg_per_kwh: f64,
    /// kg CO2 per mile driven by an average gasoline car.
    pub kg_per_mile: f64,
    /// kg CO2 per average household-week.
    pub kg_per_household_week: f64,
    /// kg CO2 per hour of TV.
    pub kg_per_tv_hour: f64,
}

impl Default for CarbonFactors {
    fn default() -> Self {
        CarbonFactors {
            emission_kg_per_kwh: 0.475,
            kg_per_mile: 0.404,
            kg_per_household_week: 176.6,
            kg_per_tv_hour: 0.097,
        }
    }
}

impl CarbonFactors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("emission_kg_per_kwh", self.emission_kg_per_kwh),
            ("kg_per_mile", self.kg_per_mile),
            ("kg_per_household_week", self.kg_per_household_week),
            ("kg_per_tv_hour", self.kg_per_tv_hour),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!(
                    "carbon factor {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarbonReport {
    pub energy_kwh: f64,
    pub emissions_kg: f64,
    pub miles_driven: f64,
    pub household_weeks: f64,
    pub tv_hours: f64,
    pub factors: CarbonFactors,
}

pub fn carbon_report(energy_kwh: f64, factors: &CarbonFactors) -> Result<CarbonReport> {
    factors.validate()?;
    if energy_kwh < 0.0 {
        return Err(Error::Domain("energy must be non-negative".into()));
    }
    let emissions_kg = energy_kwh * factors.emission_kg_per_kwh;
    Ok(CarbonReport {
        energy_kwh,
        emissions_kg,
        miles_driven: emissions_kg / factors.kg_per_mile,
        household_weeks: emissions_kg / factors.kg_per_household_week,
        tv_hours: emissions_kg / factors.kg_per_tv_hour,
        factors: factors.clone(),
    })
}

impl CarbonReport {
    fn factors(&self) -> &CarbonFactors {
        &self.factors
    }
}

/// Percent reduction of the candidate's emissions against the baseline's.
/// Requires both reports to use the same factors.
pub fn percent_reduction(baseline: &CarbonReport, candidate: &CarbonReport) -> Result<f64> {
    if baseline.factors() != candidate.factors() {
        return Err(Error::Config(
            "reports use different carbon factors; reductions are not comparable".into(),
        ));
    }
    if baseline.emissions_kg <= 0.0 {
        return Err(Error::Domain("baseline emissions must be positive".into()));
    }
    Ok((baseline.emissions_kg - candidate.emissions_kg) / baseline.emissions_kg * 100.0)
}
