use serde::{Deserialize, Serialize};

use super::exercise::{ExerciseEffect, ExerciseModifiers};
use super::noise::NoiseStream;
use super::params::PatientParams;
use crate::error::{Error, Result};
use crate::integrate::{rk4_step, substeps};
use crate::units::GLUCOSE_G_PER_MMOL;

pub const N_STATES: usize = 12;

/// Glucose mass in the accessible compartment (mmol).
pub const Q1: usize = 0;
/// Glucose mass in the non-accessible compartment (mmol).
pub const Q2: usize = 1;
/// Subcutaneous insulin, first depot (mU).
pub const S1: usize = 2;
/// Subcutaneous insulin, second depot (mU).
pub const S2: usize = 3;
/// Plasma insulin concentration (mU/L).
pub const I: usize = 4;
/// Insulin action on glucose transport (1/min).
pub const X1: usize = 5;
/// Insulin action on glucose disposal (1/min).
pub const X2: usize = 6;
/// Insulin action on endogenous production (-).
pub const X3: usize = 7;
/// Gut glucose, first compartment (mmol).
pub const D1: usize = 8;
/// Gut glucose, second compartment (mmol).
pub const D2: usize = 9;
/// Interstitial glucose seen by the sensor (mmol/L).
pub const GSUB: usize = 10;
/// Additive sensor noise (mmol/L). Not integrated; advanced per interval.
pub const NOISE: usize = 11;

pub const STATE_NAMES: [&str; N_STATES] = [
    "q1", "q2", "s1", "s2", "i", "x1", "x2", "x3", "d1", "d2", "gsub", "noise",
];

/// Default maximum RK4 substep (min).
pub const DEFAULT_SUBSTEP_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub x: [f64; N_STATES],
}

impl PatientState {
    /// Plasma glucose concentration (mmol/L).
    pub fn plasma_glucose(&self, theta: &PatientParams) -> f64 {
        self.x[Q1] / theta.vg_total()
    }
}

/// Insulin infusion held over one interval (mU/min).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InsulinInput {
    pub basal: f64,
    pub bolus: f64,
}

impl InsulinInput {
    pub fn total(&self) -> f64 {
        self.basal + self.bolus
    }
}

/// Disturbances held over one interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceInput {
    /// g CHO/min
    pub carb_rate: f64,
    /// Fraction of maximal exercise intensity in [0, 1].
    pub exercise_intensity: f64,
}

impl DisturbanceInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.carb_rate.is_finite() && self.carb_rate >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "carb_rate",
                reason: format!("must be >= 0, got {}", self.carb_rate),
            });
        }
        if !(0.0..=1.0).contains(&self.exercise_intensity) {
            return Err(Error::InvalidParameter {
                name: "exercise_intensity",
                reason: format!("must lie in [0, 1], got {}", self.exercise_intensity),
            });
        }
        Ok(())
    }
}

/// Non-insulin-dependent glucose flux (mmol/min) at concentration `g`.
fn f01_flux(theta: &PatientParams, g: f64) -> f64 {
    let h = &theta.hovorka;
    let f01 = h.f01 * theta.bodyweight;
    if g >= h.f01_threshold {
        f01
    } else {
        f01 * g / h.f01_threshold
    }
}

/// Renal glucose clearance (mmol/min) at concentration `g`.
fn renal_flux(theta: &PatientParams, g: f64) -> f64 {
    let h = &theta.hovorka;
    if g >= h.renal_threshold {
        h.renal_rate * (g - h.renal_threshold) * theta.vg_total()
    } else {
        0.0
    }
}

/// Right-hand side with an explicit exercise effect.
pub fn derivatives_with(
    x: &[f64; N_STATES],
    u: InsulinInput,
    d: DisturbanceInput,
    theta: &PatientParams,
    exercise: &dyn ExerciseEffect,
) -> [f64; N_STATES] {
    let h = &theta.hovorka;
    let ExerciseModifiers {
        uptake,
        sensitivity,
    } = exercise.modifiers(d.exercise_intensity);

    let vg = theta.vg_total();
    let g = x[Q1] / vg;
    let f01c = uptake * f01_flux(theta, g);
    let fr = renal_flux(theta, g);
    let egp = f64::max(0.0, h.egp0 * theta.bodyweight * (1.0 - x[X3]));
    let ug = x[D2] / h.tmax_g;
    let transport = sensitivity * x[X1];
    let disposal = sensitivity * x[X2];

    let mut dx = [0.0; N_STATES];
    dx[Q1] = -f01c - transport * x[Q1] + h.k12 * x[Q2] - fr + ug + egp;
    dx[Q2] = transport * x[Q1] - (h.k12 + disposal) * x[Q2];

    dx[S1] = u.total() - x[S1] / h.tmax_i;
    dx[S2] = (x[S1] - x[S2]) / h.tmax_i;
    dx[I] = x[S2] / (h.tmax_i * theta.vi_total()) - h.ke * x[I];

    dx[X1] = h.ka1 * (h.si_transport * x[I] - x[X1]);
    dx[X2] = h.ka2 * (h.si_disposal * x[I] - x[X2]);
    dx[X3] = h.ka3 * (h.si_egp * x[I] - x[X3]);

    let carb_mmol_per_min = d.carb_rate / GLUCOSE_G_PER_MMOL;
    dx[D1] = h.ag * carb_mmol_per_min - x[D1] / h.tmax_g;
    dx[D2] = (x[D1] - x[D2]) / h.tmax_g;

    dx[GSUB] = (g - x[GSUB]) / theta.cgm.tau;
    dx[NOISE] = 0.0;
    dx
}

/// Right-hand side using the default exercise hook of `theta`.
pub fn derivatives(
    x: &PatientState,
    u: InsulinInput,
    d: DisturbanceInput,
    theta: &PatientParams,
) -> PatientState {
    PatientState {
        x: derivatives_with(&x.x, u, d, theta, &theta.exercise),
    }
}

/// CGM reading (mmol/L): interstitial glucose plus the sensor noise state.
pub fn output(x: &PatientState, _theta: &PatientParams) -> f64 {
    x.x[GSUB] + x.x[NOISE]
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) > 0 > f(hi), f decreasing.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn state_at(theta: &PatientParams, g: f64, plasma_insulin: f64) -> (PatientState, f64) {
    let h = &theta.hovorka;
    let basal = plasma_insulin * theta.vi_total() * h.ke;
    let x1 = h.si_transport * plasma_insulin;
    let x2 = h.si_disposal * plasma_insulin;
    let x3 = h.si_egp * plasma_insulin;
    let q1 = g * theta.vg_total();
    let q2 = x1 * q1 / (h.k12 + x2);
    let mut x = [0.0; N_STATES];
    x[Q1] = q1;
    x[Q2] = q2;
    x[S1] = basal * h.tmax_i;
    x[S2] = basal * h.tmax_i;
    x[I] = plasma_insulin;
    x[X1] = x1;
    x[X2] = x2;
    x[X3] = x3;
    x[GSUB] = g;
    (PatientState { x }, basal)
}

/// Net glucose flux into the accessible compartment at steady state with
/// plasma glucose `g` and plasma insulin `plasma_insulin`.
fn steady_glucose_balance(theta: &PatientParams, g: f64, plasma_insulin: f64) -> f64 {
    let h = &theta.hovorka;
    let x1 = h.si_transport * plasma_insulin;
    let x2 = h.si_disposal * plasma_insulin;
    let x3 = h.si_egp * plasma_insulin;
    let q1 = g * theta.vg_total();
    // Net uptake of the non-accessible compartment: x1 q1 - k12 q2.
    let net_transport = x1 * q1 * x2 / (h.k12 + x2);
    let egp = f64::max(0.0, h.egp0 * theta.bodyweight * (1.0 - x3));
    egp - f01_flux(theta, g) - renal_flux(theta, g) - net_transport
}

/// Max-abs residual of `f` scaled by the magnitude of each state.
pub fn steady_residual(x: &PatientState, basal: f64, theta: &PatientParams) -> f64 {
    let dx = derivatives(
        x,
        InsulinInput { basal, bolus: 0.0 },
        DisturbanceInput::default(),
        theta,
    );
    dx.x.iter()
        .zip(x.x.iter())
        .map(|(d, v)| d.abs() / v.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Steady state with plasma (and noise-free sensor) glucose `target_bg`,
/// together with the basal insulin flow rate (mU/min) that sustains it.
pub fn steady_state(theta: &PatientParams, target_bg: f64) -> Result<(PatientState, f64)> {
    if !(target_bg > 3.0 && target_bg < 15.0) {
        return Err(Error::InvalidParameter {
            name: "target_bg",
            reason: format!("must lie in (3, 15) mmol/L, got {target_bg}"),
        });
    }
    let balance = |i: f64| steady_glucose_balance(theta, target_bg, i);
    if balance(0.0) <= 0.0 {
        return Err(Error::NoSteadyState(format!(
            "glucose stays below {target_bg} mmol/L even without insulin"
        )));
    }
    // x3 >= 1 shuts off endogenous production, so the root lies below.
    let hi = 1.0 / theta.hovorka.si_egp;
    if balance(hi) >= 0.0 {
        return Err(Error::NoSteadyState("insulin bracket failed".into()));
    }
    let insulin = bisect(0.0, hi, balance);
    let (x, basal) = state_at(theta, target_bg, insulin);
    let res = steady_residual(&x, basal, theta);
    if !(res < 1e-10) {
        return Err(Error::NoSteadyState(format!(
            "root solve did not converge (residual {res:e})"
        )));
    }
    Ok((x, basal))
}

/// Fixed point reached without any insulin administration.
pub fn insulin_free_steady_state(theta: &PatientParams) -> Result<PatientState> {
    let balance = |g: f64| steady_glucose_balance(theta, g, 0.0);
    let mut hi = 50.0;
    while balance(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NoSteadyState(
                "no insulin-free fixed point below 1e6 mmol/L".into(),
            ));
        }
    }
    let g = bisect(0.0, hi, balance);
    Ok(state_at(theta, g, 0.0).0)
}

/// Result of integrating over one control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub state: PatientState,
    /// Number of state components clamped to zero after a substep.
    pub clamped: usize,
}

/// Integrates over one interval of length `dt` (min) with inputs held
/// constant, using RK4 substeps of at most `max_substep` minutes, then
/// advances the sensor noise once.
pub fn advance(
    x: &PatientState,
    u: InsulinInput,
    d: DisturbanceInput,
    theta: &PatientParams,
    dt: f64,
    max_substep: f64,
    noise: &mut dyn NoiseStream,
) -> Result<Advance> {
    advance_with(x, u, d, theta, &theta.exercise, dt, max_substep, noise)
}

#[allow(clippy::too_many_arguments)]
pub fn advance_with(
    x: &PatientState,
    u: InsulinInput,
    d: DisturbanceInput,
    theta: &PatientParams,
    exercise: &dyn ExerciseEffect,
    dt: f64,
    max_substep: f64,
    noise: &mut dyn NoiseStream,
) -> Result<Advance> {
    let n = substeps(dt, max_substep);
    let h = dt / n as f64;
    let rhs = |s: &[f64; N_STATES]| derivatives_with(s, u, d, theta, exercise);
    let mut s = x.x;
    let mut clamped = 0;
    for _ in 0..n {
        s = rk4_step(&rhs, &s, h);
        for v in s.iter_mut().take(NOISE) {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
    }
    let cgm = &theta.cgm;
    s[NOISE] = cgm.noise_ar * s[NOISE]
        + cgm.noise_sd * (1.0 - cgm.noise_ar * cgm.noise_ar).sqrt() * noise.next_normal();
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            subject: 0,
            step: 0,
            detail: format!("state `{}` became non-finite", STATE_NAMES[i]),
        });
    }
    Ok(Advance {
        state: PatientState { x: s },
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patient::noise::ZeroNoise;

    fn nominal() -> PatientParams {
        PatientParams::nominal()
    }

    #[test]
    fn steady_state_at_six() {
        let theta = nominal();
        let (x, basal) = steady_state(&theta, 6.0).unwrap();
        assert!(basal > 0.0);
        assert!(steady_residual(&x, basal, &theta) < 1e-10);
        assert_eq!(output(&x, &theta), 6.0);
        // Roughly 1 U/h for a 70 kg subject.
        assert!(basal > 5.0 && basal < 40.0, "basal {basal}");
    }

    #[test]
    fn insulin_free_fixed_point_is_hyperglycemic() {
        let theta = nominal();
        let x = insulin_free_steady_state(&theta).unwrap();
        assert!(steady_residual(&x, 0.0, &theta) < 1e-10);
        // Renal clearance balances EGP0 - F01 above 9 mmol/L.
        let expected = 9.0 + (0.0161 - 0.0097) / (0.003 * 0.16);
        assert!((output(&x, &theta) - expected).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_target_rejected() {
        assert!(steady_state(&nominal(), 2.0).is_err());
        assert!(steady_state(&nominal(), 16.0).is_err());
    }

    #[test]
    fn no_steady_state_when_flux_exceeds_production() {
        let mut theta = nominal();
        theta.hovorka.f01 = 0.02;
        assert!(matches!(
            steady_state(&theta, 6.0),
            Err(Error::NoSteadyState(_))
        ));
    }

    #[test]
    fn carb_inflow_enters_first_gut_compartment() {
        let theta = nominal();
        let (x, basal) = steady_state(&theta, 6.0).unwrap();
        let u = InsulinInput { basal, bolus: 0.0 };
        let d = DisturbanceInput {
            carb_rate: 12.0,
            exercise_intensity: 0.0,
        };
        let dx = derivatives(&x, u, d, &theta);
        assert!(dx.x[D1] > 0.0);
    }

    #[test]
    fn bolus_channel_is_linear() {
        let theta = nominal();
        let (x, basal) = steady_state(&theta, 6.0).unwrap();
        let d = DisturbanceInput::default();
        let a = derivatives(
            &x,
            InsulinInput {
                basal,
                bolus: 100.0,
            },
            d,
            &theta,
        );
        let b = derivatives(
            &x,
            InsulinInput {
                basal,
                bolus: 200.0,
            },
            d,
            &theta,
        );
        assert!((b.x[S1] - a.x[S1] - 100.0).abs() < 1e-9);
        for i in 0..N_STATES {
            if i != S1 {
                assert_eq!(a.x[i], b.x[i]);
            }
        }
    }

    #[test]
    fn noise_is_additive_on_output() {
        let theta = nominal();
        let (mut x, _) = steady_state(&theta, 6.0).unwrap();
        x.x[NOISE] = 0.5;
        assert_eq!(output(&x, &theta), 6.5);
    }

    #[test]
    fn output_monotone_in_accessible_glucose_after_lag() {
        // The sensor follows plasma glucose; after one interval a larger
        // accessible glucose mass gives a larger reading.
        let theta = nominal();
        let (x, basal) = steady_state(&theta, 6.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..20 {
            let mut s = x;
            s.x[Q1] *= 0.8 + 0.02 * k as f64;
            let adv = advance(
                &s,
                InsulinInput { basal, bolus: 0.0 },
                DisturbanceInput::default(),
                &theta,
                5.0,
                DEFAULT_SUBSTEP_MIN,
                &mut ZeroNoise,
            )
            .unwrap();
            let z = output(&adv.state, &theta);
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn exercise_lowers_glucose_derivative() {
        let theta = nominal();
        let (x, basal) = steady_state(&theta, 6.0).unwrap();
        let u = InsulinInput { basal, bolus: 0.0 };
        let rest = derivatives(&x, u, DisturbanceInput::default(), &theta);
        let ex = derivatives(
            &x,
            u,
            DisturbanceInput {
                carb_rate: 0.0,
                exercise_intensity: 0.5,
            },
            &theta,
        );
        assert!(ex.x[Q1] < rest.x[Q1]);
    }

    #[test]
    fn clamp_events_are_counted() {
        let theta = nominal();
        let (mut x, basal) = steady_state(&theta, 6.0).unwrap();
        x.x[D1] = -1.0;
        let adv = advance(
            &x,
            InsulinInput { basal, bolus: 0.0 },
            DisturbanceInput::default(),
            &theta,
            5.0,
            DEFAULT_SUBSTEP_MIN,
            &mut ZeroNoise,
        )
        .unwrap();
        assert!(adv.clamped > 0);
        assert!(adv.state.x.iter().take(NOISE).all(|v| *v >= 0.0));
    }

    #[test]
    fn non_finite_state_is_divergence() {
        let theta = nominal();
        let (mut x, basal) = steady_state(&theta, 6.0).unwrap();
        x.x[Q2] = f64::NAN;
        let err = advance(
            &x,
            InsulinInput { basal, bolus: 0.0 },
            DisturbanceInput::default(),
            &theta,
            5.0,
            DEFAULT_SUBSTEP_MIN,
            &mut ZeroNoise,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
