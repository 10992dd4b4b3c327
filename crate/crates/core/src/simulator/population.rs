use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::mix_seed;
use crate::patient::{steady_state, PatientParams};

/// Log-normal dispersions (SD of the log multiplier) per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dispersion {
    pub bodyweight: f64,
    /// si_transport, si_disposal, si_egp
    pub sensitivity: f64,
    /// k12, ka1, ka2, ka3, ke, tmax_g, tmax_i, cgm.tau
    pub time_constant: f64,
    /// vi, vg
    pub volume: f64,
    /// f01, egp0
    pub flux: f64,
    pub bioavailability: f64,
    /// Maximum rejected draws per retained subject before giving up.
    pub max_rejections_per_subject: usize,
}

impl Default for Dispersion {
    fn default() -> Self {
        Dispersion {
            bodyweight: 0.15,
            sensitivity: 0.25,
            time_constant: 0.2,
            volume: 0.1,
            flux: 0.15,
            bioavailability: 0.05,
            max_rejections_per_subject: 100,
        }
    }
}

impl Dispersion {
    pub fn zero() -> Self {
        Dispersion {
            bodyweight: 0.0,
            sensitivity: 0.0,
            time_constant: 0.0,
            volume: 0.0,
            flux: 0.0,
            bioavailability: 0.0,
            max_rejections_per_subject: 100,
        }
    }
}

/// Largest allowed ratio between a subject's time constant and the nominal.
pub const TIME_CONSTANT_RATIO_LIMIT: f64 = 10.0;

/// Glucose level (mmol/L) at which every subject must admit a steady state.
const SCREEN_TARGET_BG: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub seed: u64,
    /// Draws rejected by the time-constant screen.
    pub rejected_time_constant: usize,
    /// Draws rejected because no 6 mmol/L steady state exists.
    pub rejected_no_steady_state: usize,
    pub subjects: Vec<PatientParams>,
}

impl Population {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("population serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Population = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for s in &p.subjects {
            s.validate()?;
        }
        Ok(p)
    }
}

/// True when every time constant of `p` is within a factor 10 of the
/// corresponding nominal value.
pub fn passes_time_constant_screen(p: &PatientParams, nominal: &PatientParams) -> bool {
    p.time_constants()
        .iter()
        .zip(nominal.time_constants())
        .all(|((_, v), (_, m))| {
            let r = v / m;
            (1.0 / TIME_CONSTANT_RATIO_LIMIT..=TIME_CONSTANT_RATIO_LIMIT).contains(&r)
        })
}

fn draw(nominal: &PatientParams, disp: &Dispersion, rng: &mut ChaCha8Rng) -> PatientParams {
    let mut mult = |sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (sd * z).exp()
    };
    let mut p = nominal.clone();
    p.bodyweight *= mult(disp.bodyweight);
    let h = &mut p.hovorka;
    h.si_transport *= mult(disp.sensitivity);
    h.si_disposal *= mult(disp.sensitivity);
    h.si_egp *= mult(disp.sensitivity);
    h.k12 *= mult(disp.time_constant);
    h.ka1 *= mult(disp.time_constant);
    h.ka2 *= mult(disp.time_constant);
    h.ka3 *= mult(disp.time_constant);
    h.ke *= mult(disp.time_constant);
    h.tmax_g *= mult(disp.time_constant);
    h.tmax_i *= mult(disp.time_constant);
    h.vi *= mult(disp.volume);
    h.vg *= mult(disp.volume);
    h.f01 *= mult(disp.flux);
    h.egp0 *= mult(disp.flux);
    h.ag = (h.ag * mult(disp.bioavailability)).min(1.0);
    p.cgm.tau *= mult(disp.time_constant);
    p
}

/// Samples `n` subjects with log-normal multiplicative perturbations of
/// `nominal`. Subject `i` draws from its own ChaCha stream, so the result
/// does not depend on evaluation order. Draws failing the time-constant
/// screen (or lacking a 6 mmol/L steady state) are replaced.
pub fn sample_population(
    nominal: &PatientParams,
    n: usize,
    seed: u64,
    disp: &Dispersion,
) -> Result<Population> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "population must be nonempty".into(),
        });
    }
    nominal.validate()?;
    let mut pop = Population {
        seed,
        rejected_time_constant: 0,
        rejected_no_steady_state: 0,
        subjects: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut rejections = 0;
        loop {
            let mut p = draw(nominal, disp, &mut rng);
            // 63 bits so the seed fits a TOML integer.
            p.rng_seed = mix_seed(seed, i as u64) >> 1;
            if !passes_time_constant_screen(&p, nominal) {
                pop.rejected_time_constant += 1;
            } else if p.validate().is_err() || steady_state(&p, SCREEN_TARGET_BG).is_err() {
                pop.rejected_no_steady_state += 1;
            } else {
                pop.subjects.push(p);
                break;
            }
            rejections += 1;
            if rejections > disp.max_rejections_per_subject {
                return Err(Error::SamplingExhausted {
                    requested: n,
                    rejected: pop.rejected_time_constant + pop.rejected_no_steady_state,
                });
            }
        }
    }
    Ok(pop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dispersion_returns_nominal() {
        let nominal = PatientParams::nominal();
        let pop = sample_population(&nominal, 1, 3, &Dispersion::zero()).unwrap();
        let mut got = pop.subjects[0].clone();
        got.rng_seed = nominal.rng_seed;
        assert_eq!(got, nominal);
    }

    #[test]
    fn screen_rejects_tenfold_outliers() {
        let nominal = PatientParams::nominal();
        let mut p = nominal.clone();
        p.hovorka.tmax_i *= 10.5;
        assert!(!passes_time_constant_screen(&p, &nominal));
        p.hovorka.tmax_i = nominal.hovorka.tmax_i * 9.5;
        assert!(passes_time_constant_screen(&p, &nominal));
        p.hovorka.ke *= 11.0;
        assert!(!passes_time_constant_screen(&p, &nominal));
    }

    #[test]
    fn wide_dispersion_triggers_rejections_and_screen_holds() {
        let nominal = PatientParams::nominal();
        let disp = Dispersion {
            time_constant: 1.5,
            max_rejections_per_subject: 10_000,
            ..Dispersion::default()
        };
        let pop = sample_population(&nominal, 200, 11, &disp).unwrap();
        assert!(pop.rejected_time_constant > 0);
        assert!(pop
            .subjects
            .iter()
            .all(|p| passes_time_constant_screen(p, &nominal)));
    }

    #[test]
    fn exhaustion_is_reported() {
        let nominal = PatientParams::nominal();
        let disp = Dispersion {
            time_constant: 50.0,
            max_rejections_per_subject: 2,
            ..Dispersion::default()
        };
        assert!(matches!(
            sample_population(&nominal, 50, 1, &disp),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let nominal = PatientParams::nominal();
        let a = sample_population(&nominal, 20, 9, &Dispersion::default()).unwrap();
        let b = sample_population(&nominal, 20, 9, &Dispersion::default()).unwrap();
        assert_eq!(a, b);
        let c = sample_population(&nominal, 5, 9, &Dispersion::default()).unwrap();
        assert_eq!(&a.subjects[..5], &c.subjects[..]);
    }

    #[test]
    fn population_file_roundtrip() {
        let pop =
            sample_population(&PatientParams::nominal(), 3, 2, &Dispersion::default()).unwrap();
        assert_eq!(
            Population::from_toml_str(&pop.to_toml_string()).unwrap(),
            pop
        );
    }
}
