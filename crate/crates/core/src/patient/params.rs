use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physiological constants of the glucose-insulin model.
///
/// | field            | unit                 | nominal  | meaning                                      |
/// |------------------|----------------------|----------|----------------------------------------------|
/// | `k12`            | 1/min                | 0.066    | transfer, non-accessible to accessible       |
/// | `ka1`            | 1/min                | 0.006    | deactivation, insulin action on transport    |
/// | `ka2`            | 1/min                | 0.06     | deactivation, insulin action on disposal     |
/// | `ka3`            | 1/min                | 0.03     | deactivation, insulin action on EGP          |
/// | `si_transport`   | 1/min per mU/L       | 51.2e-4  | insulin sensitivity of transport             |
/// | `si_disposal`    | 1/min per mU/L       | 8.2e-4   | insulin sensitivity of disposal              |
/// | `si_egp`         | 1 per mU/L           | 520e-4   | insulin sensitivity of EGP                   |
/// | `ke`             | 1/min                | 0.138    | plasma insulin elimination                   |
/// | `vi`             | L/kg                 | 0.12     | insulin distribution volume                  |
/// | `vg`             | L/kg                 | 0.16     | glucose distribution volume                  |
/// | `f01`            | mmol/(kg min)        | 0.0097   | non-insulin-dependent glucose flux           |
/// | `egp0`           | mmol/(kg min)        | 0.0161   | EGP extrapolated to zero insulin             |
/// | `ag`             | -                    | 0.8      | carbohydrate bioavailability                 |
/// | `tmax_g`         | min                  | 40       | time-to-maximum of carbohydrate absorption   |
/// | `tmax_i`         | min                  | 55       | time-to-maximum of subcutaneous absorption   |
/// | `f01_threshold`  | mmol/L               | 4.5      | below this the flux `f01` decreases linearly |
/// | `renal_threshold`| mmol/L               | 9.0      | renal clearance threshold                    |
/// | `renal_rate`     | 1/min                | 0.003    | renal clearance rate                         |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HovorkaParams {
    pub k12: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub ka3: f64,
    pub si_transport: f64,
    pub si_disposal: f64,
    pub si_egp: f64,
    pub ke: f64,
    pub vi: f64,
    pub vg: f64,
    pub f01: f64,
    pub egp0: f64,
    pub ag: f64,
    pub tmax_g: f64,
    pub tmax_i: f64,
    pub f01_threshold: f64,
    pub renal_threshold: f64,
    pub renal_rate: f64,
}

impl Default for HovorkaParams {
    fn default() -> Self {
        HovorkaParams {
            k12: 0.066,
            ka1: 0.006,
            ka2: 0.06,
            ka3: 0.03,
            si_transport: 51.2e-4,
            si_disposal: 8.2e-4,
            si_egp: 520e-4,
            ke: 0.138,
            vi: 0.12,
            vg: 0.16,
            f01: 0.0097,
            egp0: 0.0161,
            ag: 0.8,
            tmax_g: 40.0,
            tmax_i: 55.0,
            f01_threshold: 4.5,
            renal_threshold: 9.0,
            renal_rate: 0.003,
        }
    }
}

impl HovorkaParams {
    /// Named time constants (min) screened during population sampling.
    pub fn time_constants(&self) -> [(&'static str, f64); 7] {
        [
            ("1/k12", 1.0 / self.k12),
            ("1/ka1", 1.0 / self.ka1),
            ("1/ka2", 1.0 / self.ka2),
            ("1/ka3", 1.0 / self.ka3),
            ("1/ke", 1.0 / self.ke),
            ("tmax_g", self.tmax_g),
            ("tmax_i", self.tmax_i),
        ]
    }
}

/// Sensor model: first-order interstitial lag plus AR(1) additive noise
/// advanced once per control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgmParams {
    /// Plasma-to-interstitium time constant (min).
    pub tau: f64,
    /// Stationary standard deviation of the additive noise (mmol/L).
    pub noise_sd: f64,
    /// AR(1) coefficient per control interval.
    pub noise_ar: f64,
}

impl Default for CgmParams {
    fn default() -> Self {
        CgmParams {
            tau: 7.0,
            noise_sd: 0.2,
            noise_ar: 0.7,
        }
    }
}

/// Constants of the default exercise hook. At intensity `e` the
/// non-insulin-dependent flux is scaled by `1 + uptake_gain * e` and the
/// insulin action on transport and disposal by `1 + sensitivity_gain * e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExerciseParams {
    pub uptake_gain: f64,
    pub sensitivity_gain: f64,
}

impl Default for ExerciseParams {
    fn default() -> Self {
        ExerciseParams {
            uptake_gain: 1.0,
            sensitivity_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientParams {
    pub bodyweight: f64,
    pub rng_seed: u64,
    pub hovorka: HovorkaParams,
    pub cgm: CgmParams,
    pub exercise: ExerciseParams,
}

impl Default for PatientParams {
    fn default() -> Self {
        PatientParams {
            bodyweight: 70.0,
            rng_seed: 0,
            hovorka: HovorkaParams::default(),
            cgm: CgmParams::default(),
            exercise: ExerciseParams::default(),
        }
    }
}

/// The nominal parameter file shipped with the crate.
pub const NOMINAL_PATIENT_TOML: &str = include_str!("../../config/nominal_patient.toml");

impl PatientParams {
    pub fn nominal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hovorka;
        let positive = [
            ("bodyweight", self.bodyweight),
            ("k12", h.k12),
            ("ka1", h.ka1),
            ("ka2", h.ka2),
            ("ka3", h.ka3),
            ("si_transport", h.si_transport),
            ("si_disposal", h.si_disposal),
            ("si_egp", h.si_egp),
            ("ke", h.ke),
            ("vi", h.vi),
            ("vg", h.vg),
            ("f01", h.f01),
            ("egp0", h.egp0),
            ("ag", h.ag),
            ("tmax_g", h.tmax_g),
            ("tmax_i", h.tmax_i),
            ("f01_threshold", h.f01_threshold),
            ("renal_threshold", h.renal_threshold),
            ("cgm.tau", self.cgm.tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let non_negative = [
            ("renal_rate", h.renal_rate),
            ("cgm.noise_sd", self.cgm.noise_sd),
            ("exercise.uptake_gain", self.exercise.uptake_gain),
            ("exercise.sensitivity_gain", self.exercise.sensitivity_gain),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        if !(self.cgm.noise_ar.abs() < 1.0) {
            return Err(Error::InvalidParameter {
                name: "cgm.noise_ar",
                reason: format!("must lie in (-1, 1), got {}", self.cgm.noise_ar),
            });
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: PatientParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("patient parameters serialize")
    }

    /// All time constants (min), including the sensor lag.
    pub fn time_constants(&self) -> Vec<(&'static str, f64)> {
        let mut out = self.hovorka.time_constants().to_vec();
        out.push(("cgm.tau", self.cgm.tau));
        out
    }

    /// Glucose distribution volume (L).
    pub fn vg_total(&self) -> f64 {
        self.hovorka.vg * self.bodyweight
    }

    /// Insulin distribution volume (L).
    pub fn vi_total(&self) -> f64 {
        self.hovorka.vi * self.bodyweight
    }
}
