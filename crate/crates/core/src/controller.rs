//! One-size-fits-all insulin dosing law.
//!
//! Every 5 minutes the controller receives a CGM sample and (optionally) the
//! carbohydrate content of an announced meal, and returns a basal and a bolus
//! insulin flow rate for the following control interval.
//!
//! * The nominal basal rate is an integral term driven by a deadband error
//!   on the CGM value, active only when no meal was announced in the last
//!   9.5 h.
//! * A PD microadjustment is added on top of the nominal basal rate. Between
//!   the safety threshold and the target it may only reduce insulin, and below
//!   the safety threshold basal delivery stops.
//! * Meal boluses follow a continuous piecewise linear function of the
//!   bodyweight-normalized carbohydrate flow rate whose slope `alpha` is a
//!   second integral term, active only inside the post-meal window.
//!
//! All constants default to the tuned population values and can be
//! overridden from a flat TOML table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of a physically meaningful CGM value (mmol/L).
pub const MAX_VALID_CGM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Control and sampling interval (min).
    pub sample_interval_min: f64,
    /// mU/min
    pub u_max_basal: f64,
    /// mU/min
    pub u_max_bolus: f64,
    /// Glucose target (mmol/L).
    pub target: f64,
    /// Below this CGM value basal delivery is suspended (mmol/L).
    pub safety_threshold: f64,
    /// Length of the post-meal window (h).
    pub meal_window_h: f64,
    /// mU L/(mmol min^2)
    pub k_i_basal: f64,
    pub basal_deadband_low: f64,
    pub basal_deadband_high: f64,
    /// Multiplier on errors below the deadbands.
    pub hypo_amplification: f64,
    /// mU L/(mmol min)
    pub k_p_ma: f64,
    /// mU L/mmol
    pub k_d_ma: f64,
    /// Normalized carbohydrate flow rate at which the bolus slope breaks
    /// (g CHO/(kg min)).
    pub carb_threshold: f64,
    /// Slope divisor above `carb_threshold`.
    pub beta: f64,
    /// mU kg L/(g CHO mmol min)
    pub k_i_bolus: f64,
    pub bolus_deadband_low: f64,
    pub bolus_deadband_high: f64,
    /// CGM values above this all produce the same bolus error (mmol/L).
    pub bolus_clip_threshold: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            sample_interval_min: 5.0,
            u_max_basal: 55.0,
            u_max_bolus: 8000.0,
            target: 6.0,
            safety_threshold: 3.0,
            meal_window_h: 9.5,
            k_i_basal: 4e-4,
            basal_deadband_low: 3.9,
            basal_deadband_high: 8.0,
            hypo_amplification: 100.0,
            k_p_ma: 0.3,
            k_d_ma: 10.0,
            carb_threshold: 0.1,
            beta: 2.0,
            k_i_bolus: 0.05,
            bolus_deadband_low: 3.9,
            bolus_deadband_high: 10.0,
            bolus_clip_threshold: 13.9,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_interval_min", self.sample_interval_min),
            ("u_max_basal", self.u_max_basal),
            ("u_max_bolus", self.u_max_bolus),
            ("target", self.target),
            ("safety_threshold", self.safety_threshold),
            ("meal_window_h", self.meal_window_h),
            ("k_i_basal", self.k_i_basal),
            ("basal_deadband_low", self.basal_deadband_low),
            ("hypo_amplification", self.hypo_amplification),
            ("k_p_ma", self.k_p_ma),
            ("k_d_ma", self.k_d_ma),
            ("carb_threshold", self.carb_threshold),
            ("beta", self.beta),
            ("k_i_bolus", self.k_i_bolus),
            ("bolus_deadband_low", self.bolus_deadband_low),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let ordered = [
            (
                "basal_deadband_high",
                self.basal_deadband_low,
                self.basal_deadband_high,
            ),
            (
                "bolus_deadband_high",
                self.bolus_deadband_low,
                self.bolus_deadband_high,
            ),
            (
                "bolus_clip_threshold",
                self.bolus_deadband_high,
                self.bolus_clip_threshold,
            ),
            ("target", self.safety_threshold, self.target),
        ];
        for (name, lo, hi) in ordered {
            if !(hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must exceed {lo}, got {hi}"),
                });
            }
        }
        Ok(())
    }

    pub fn meal_window_min(&self) -> f64 {
        self.meal_window_h * 60.0
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ControllerParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat table of floats always serializes")
    }
}

/// Evolving estimator state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Nominal basal estimate (mU/min), never negative.
    pub i_basal: f64,
    /// Meal bolus factor `alpha` (mU kg/g CHO), never negative.
    pub i_bolus: f64,
    /// Previous CGM sample (mmol/L).
    pub prev_cgm: Option<f64>,
    /// Time of the last announced meal (min).
    pub last_meal_time: Option<f64>,
    /// Time of the last accepted sample (min).
    pub last_sample_time: Option<f64>,
}

/// Snapshot format version written by [`ControllerState::to_snapshot`].
pub const STATE_SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateSnapshot {
    version: u32,
    // Field order is part of the format.
    i_basal: f64,
    i_bolus: f64,
    prev_cgm: Option<f64>,
    last_meal_time: Option<f64>,
    last_sample_time: Option<f64>,
}

impl ControllerState {
    /// Serializes the state as a one-line JSON object with fields in the
    /// order `version, i_basal, i_bolus, prev_cgm, last_meal_time,
    /// last_sample_time`. Absent values are written as `null`.
    pub fn to_snapshot(&self) -> String {
        serde_json::to_string(&StateSnapshot {
            version: STATE_SNAPSHOT_VERSION,
            i_basal: self.i_basal,
            i_bolus: self.i_bolus,
            prev_cgm: self.prev_cgm,
            last_meal_time: self.last_meal_time,
            last_sample_time: self.last_sample_time,
        })
        .expect("snapshot serializes")
    }

    pub fn from_snapshot(s: &str) -> Result<Self> {
        let snap: StateSnapshot =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if snap.version != STATE_SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported controller snapshot version {}",
                snap.version
            )));
        }
        if !(snap.i_basal >= 0.0 && snap.i_bolus >= 0.0) {
            return Err(Error::Config("negative integrator in snapshot".into()));
        }
        Ok(ControllerState {
            i_basal: snap.i_basal,
            i_bolus: snap.i_bolus,
            prev_cgm: snap.prev_cgm,
            last_meal_time: snap.last_meal_time,
            last_sample_time: snap.last_sample_time,
        })
    }
}

/// Intermediate quantities of one controller step, kept for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub w_ba: f64,
    pub w_ma: f64,
    pub w_bo: f64,
    pub e_ba: f64,
    pub e_bo: f64,
    pub p_ma: f64,
    pub d_ma: f64,
    /// Nominal basal estimate used for this step (mU/min).
    pub u_ba_nominal: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DoseCommand {
    /// mU/min
    pub basal_rate: f64,
    /// mU/min
    pub bolus_rate: f64,
    pub diagnostics: Diagnostics,
}

fn check_measurement(y: f64) -> Result<()> {
    if y.is_finite() && y > 0.0 && y <= MAX_VALID_CGM {
        Ok(())
    } else {
        Err(Error::InvalidMeasurement(y))
    }
}

/// Deadband error driving the basal integrator.
pub fn basal_error(y: f64, params: &ControllerParams) -> Result<f64> {
    check_measurement(y)?;
    Ok(if y > params.basal_deadband_high {
        y - params.basal_deadband_high
    } else if y < params.basal_deadband_low {
        params.hypo_amplification * (y - params.basal_deadband_low)
    } else {
        0.0
    })
}

/// Deadband error driving the bolus-factor integrator, saturated above
/// `bolus_clip_threshold`.
pub fn bolus_error(y: f64, params: &ControllerParams) -> Result<f64> {
    check_measurement(y)?;
    Ok(if y > params.bolus_clip_threshold {
        params.bolus_clip_threshold - params.bolus_deadband_high
    } else if y >= params.bolus_deadband_high {
        y - params.bolus_deadband_high
    } else if y < params.bolus_deadband_low {
        params.hypo_amplification * (y - params.bolus_deadband_low)
    } else {
        0.0
    })
}

/// Meal bolus flow rate (mU/min) for bolus factor `alpha` and normalized
/// carbohydrate flow rate `d_hat` (g CHO/(kg min)).
pub fn bolus_curve(alpha: f64, d_hat: f64, params: &ControllerParams) -> Result<f64> {
    if !(d_hat.is_finite() && d_hat >= 0.0) {
        return Err(Error::InvalidAnnouncement(format!(
            "normalized carbohydrate rate must be finite and >= 0, got {d_hat}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("bolus factor must be finite and >= 0, got {alpha}"),
        });
    }
    let d_th = params.carb_threshold;
    Ok(if d_hat > d_th {
        alpha * d_th + alpha / params.beta * (d_hat - d_th)
    } else {
        alpha * d_hat
    })
}

#[inline]
fn clip(v: f64, max: f64) -> f64 {
    if v > max {
        max
    } else if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Applies the weighted integral increments. The updated integrators feed
/// the dose of the same step.
#[inline]
fn update_integrators(
    state: &ControllerState,
    params: &ControllerParams,
    w_ba: f64,
    e_ba: f64,
    w_bo: f64,
    e_bo: f64,
) -> (f64, f64) {
    let ts = params.sample_interval_min;
    let i_basal = f64::max(0.0, state.i_basal + w_ba * params.k_i_basal * e_ba * ts);
    let i_bolus = f64::max(0.0, state.i_bolus + w_bo * params.k_i_bolus * e_bo * ts);
    (i_basal, i_bolus)
}

/// Inputs of a single controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    /// Sample time (min).
    pub t: f64,
    /// CGM measurement (mmol/L).
    pub cgm: f64,
    /// Announced meal carbohydrates for this interval (g CHO), 0 if none.
    pub announced_carbs: f64,
    /// kg
    pub bodyweight: f64,
}

/// One controller step as a pure function of the previous state.
///
/// On error the caller's state is untouched since a new state is only
/// returned on success.
pub fn step(
    state: &ControllerState,
    params: &ControllerParams,
    input: StepInput,
) -> Result<(DoseCommand, ControllerState)> {
    let StepInput {
        t,
        cgm: y,
        announced_carbs,
        bodyweight,
    } = input;
    check_measurement(y)?;
    if !(announced_carbs.is_finite() && announced_carbs >= 0.0) {
        return Err(Error::InvalidAnnouncement(format!(
            "announced carbohydrates must be finite and >= 0, got {announced_carbs}"
        )));
    }
    if !(bodyweight.is_finite() && bodyweight > 0.0) {
        return Err(Error::InvalidParameter {
            name: "bodyweight",
            reason: format!("must be > 0, got {bodyweight}"),
        });
    }
    let ts = params.sample_interval_min;
    if let Some(prev_t) = state.last_sample_time {
        let expected = prev_t + ts;
        if !t.is_finite() || (t - expected).abs() > 1e-9 * ts.max(t.abs()) {
            return Err(Error::Sequencing { expected, got: t });
        }
    } else if !t.is_finite() {
        return Err(Error::Sequencing {
            expected: 0.0,
            got: t,
        });
    }

    let last_meal_time = if announced_carbs > 0.0 {
        Some(t)
    } else {
        state.last_meal_time
    };
    let w_ba = match last_meal_time {
        Some(tm) if t - tm <= params.meal_window_min() => 0.0,
        _ => 1.0,
    };
    let w_bo = 1.0 - w_ba;
    let w_ma = if y < params.target || w_ba == 1.0 {
        1.0
    } else {
        0.0
    };

    let e_ba = basal_error(y, params)?;
    let e_bo = bolus_error(y, params)?;
    let (i_basal, i_bolus) = update_integrators(state, params, w_ba, e_ba, w_bo, e_bo);

    let p_ma = w_ma * params.k_p_ma * (y - params.target);
    let d_ma = match state.prev_cgm {
        Some(y_prev) => w_ma * params.k_d_ma * (y - y_prev) / ts,
        None => 0.0,
    };
    let u_ma = p_ma + d_ma;
    let u_ba_nominal = i_basal;

    let basal = if y >= params.target {
        u_ba_nominal + u_ma
    } else if y > params.safety_threshold {
        u_ba_nominal + f64::min(0.0, u_ma)
    } else {
        0.0
    };

    let d_hat = announced_carbs / (bodyweight * ts);
    let bolus = bolus_curve(i_bolus, d_hat, params)?;

    let cmd = DoseCommand {
        basal_rate: clip(basal, params.u_max_basal),
        bolus_rate: clip(bolus, params.u_max_bolus),
        diagnostics: Diagnostics {
            w_ba,
            w_ma,
            w_bo,
            e_ba,
            e_bo,
            p_ma,
            d_ma,
            u_ba_nominal,
        },
    };
    let next = ControllerState {
        i_basal,
        i_bolus,
        prev_cgm: Some(y),
        last_meal_time,
        last_sample_time: Some(t),
    };
    Ok((cmd, next))
}

/// Stateful wrapper around [`step`].
#[derive(Debug, Clone, Default)]
pub struct Controller {
    pub params: ControllerParams,
    pub state: ControllerState,
}

impl Controller {
    pub fn new(params: ControllerParams) -> Result<Self> {
        params.validate()?;
        Ok(Controller {
            params,
            state: ControllerState::default(),
        })
    }

    pub fn step(&mut self, input: StepInput) -> Result<DoseCommand> {
        let (cmd, next) = step(&self.state, &self.params, input)?;
        self.state = next;
        Ok(cmd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ControllerParams {
        ControllerParams::default()
    }

    fn input(t: f64, cgm: f64, carbs: f64) -> StepInput {
        StepInput {
            t,
            cgm,
            announced_carbs: carbs,
            bodyweight: 70.0,
        }
    }

    #[test]
    fn basal_error_cases() {
        assert_eq!(basal_error(9.0, &p()).unwrap(), 1.0);
        assert_eq!(basal_error(5.0, &p()).unwrap(), 0.0);
        assert!((basal_error(3.4, &p()).unwrap() - -50.0).abs() < 1e-12);
        assert_eq!(basal_error(8.0, &p()).unwrap(), 0.0);
        assert_eq!(basal_error(3.9, &p()).unwrap(), 0.0);
    }

    #[test]
    fn bolus_error_cases() {
        assert!((bolus_error(15.0, &p()).unwrap() - 3.9).abs() < 1e-12);
        assert_eq!(bolus_error(12.0, &p()).unwrap(), 2.0);
        assert!((bolus_error(3.0, &p()).unwrap() - -90.0).abs() < 1e-12);
        assert_eq!(bolus_error(7.0, &p()).unwrap(), 0.0);
        assert_eq!(bolus_error(10.0, &p()).unwrap(), 0.0);
        let sat = bolus_error(13.9, &p()).unwrap();
        assert_eq!(bolus_error(40.0, &p()).unwrap(), sat);
    }

    #[test]
    fn invalid_measurements_rejected() {
        for y in [0.0, -1.0, f64::NAN, f64::INFINITY, 50.5] {
            assert!(matches!(
                basal_error(y, &p()),
                Err(Error::InvalidMeasurement(_))
            ));
            assert!(bolus_error(y, &p()).is_err());
        }
    }

    #[test]
    fn bolus_curve_examples() {
        assert_eq!(bolus_curve(10.0, 0.05, &p()).unwrap(), 0.5);
        assert_eq!(bolus_curve(10.0, 0.1, &p()).unwrap(), 1.0);
        assert!((bolus_curve(10.0, 0.2, &p()).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(bolus_curve(0.0, 0.7, &p()).unwrap(), 0.0);
        assert!(matches!(
            bolus_curve(10.0, -0.1, &p()),
            Err(Error::InvalidAnnouncement(_))
        ));
    }

    #[test]
    fn hypo_suspends_basal() {
        let state = ControllerState {
            i_basal: 30.0,
            ..Default::default()
        };
        let (cmd, _) = step(&state, &p(), input(0.0, 2.5, 0.0)).unwrap();
        assert_eq!(cmd.basal_rate, 0.0);
    }

    #[test]
    fn fresh_state_on_target_gives_zero_doses() {
        let (cmd, next) = step(&ControllerState::default(), &p(), input(0.0, 6.0, 0.0)).unwrap();
        assert_eq!(cmd.basal_rate, 0.0);
        assert_eq!(cmd.bolus_rate, 0.0);
        assert_eq!(next.i_basal, 0.0);
        assert_eq!(next.prev_cgm, Some(6.0));
    }

    #[test]
    fn basal_clipped_at_max() {
        // 9 mmol/L: e_ba = 1 adds 0.002; P = 0.9; D = 10 * 1 / 5 = 2.
        let state = ControllerState {
            i_basal: 70.0 - 0.9 - 2.0 - 0.002,
            prev_cgm: Some(8.0),
            last_sample_time: Some(-5.0),
            ..Default::default()
        };
        let (cmd, _) = step(&state, &p(), input(0.0, 9.0, 0.0)).unwrap();
        assert!(
            (cmd.diagnostics.u_ba_nominal + cmd.diagnostics.p_ma + cmd.diagnostics.d_ma - 70.0)
                .abs()
                < 1e-9
        );
        assert_eq!(cmd.basal_rate, 55.0);
    }

    #[test]
    fn microadjustment_only_reduces_between_safety_and_target() {
        // Rising CGM below target: u_ma > 0 but may not increase basal.
        let state = ControllerState {
            i_basal: 10.0,
            prev_cgm: Some(4.0),
            last_sample_time: Some(0.0),
            ..Default::default()
        };
        let (cmd, _) = step(&state, &p(), input(5.0, 5.5, 0.0)).unwrap();
        assert!(cmd.diagnostics.p_ma + cmd.diagnostics.d_ma > 0.0);
        assert_eq!(cmd.basal_rate, 10.0);
    }

    #[test]
    fn meal_window_boundary_is_strict() {
        let mut c = Controller::new(p()).unwrap();
        let cmd = c.step(input(0.0, 7.0, 60.0)).unwrap();
        assert_eq!(cmd.diagnostics.w_bo, 1.0);
        let mut t = 0.0;
        let window = p().meal_window_min();
        loop {
            t += 5.0;
            let cmd = c.step(input(t, 7.0, 0.0)).unwrap();
            if t <= window {
                assert_eq!(cmd.diagnostics.w_ba, 0.0, "t = {t}");
            } else {
                assert_eq!(cmd.diagnostics.w_ba, 1.0, "t = {t}");
                break;
            }
        }
        assert_eq!(t, window + 5.0);
    }

    #[test]
    fn no_meal_yet_means_basal_estimation() {
        let (cmd, _) = step(&ControllerState::default(), &p(), input(0.0, 9.0, 0.0)).unwrap();
        assert_eq!(cmd.diagnostics.w_ba, 1.0);
        assert_eq!(cmd.diagnostics.w_bo, 0.0);
        assert_eq!(cmd.diagnostics.w_ma, 1.0);
    }

    #[test]
    fn first_sample_has_no_derivative() {
        let (cmd, _) = step(&ControllerState::default(), &p(), input(0.0, 9.0, 0.0)).unwrap();
        assert_eq!(cmd.diagnostics.d_ma, 0.0);
    }

    #[test]
    fn bolus_uses_updated_factor() {
        let state = ControllerState {
            i_bolus: 1000.0,
            ..Default::default()
        };
        // 12 mmol/L in the meal window: alpha += 0.05 * 2 * 5 = 0.5.
        let (cmd, next) = step(&state, &p(), input(0.0, 12.0, 35.0)).unwrap();
        assert_eq!(next.i_bolus, 1000.5);
        // d_hat = 35 / 350 = 0.1, on the threshold.
        assert!((cmd.bolus_rate - 100.05).abs() < 1e-9);
    }

    #[test]
    fn sequencing_and_invalid_inputs_leave_state_untouched() {
        let mut c = Controller::new(p()).unwrap();
        c.step(input(0.0, 7.0, 0.0)).unwrap();
        let before = c.state.clone();
        assert!(matches!(
            c.step(input(7.0, 7.0, 0.0)),
            Err(Error::Sequencing { .. })
        ));
        assert!(matches!(
            c.step(input(5.0, f64::NAN, 0.0)),
            Err(Error::InvalidMeasurement(_))
        ));
        assert!(c.step(input(5.0, 7.0, -3.0)).is_err());
        assert_eq!(c.state, before);
        c.step(input(5.0, 7.0, 0.0)).unwrap();
    }

    #[test]
    fn params_toml_roundtrip_and_unknown_key() {
        let s = p().to_toml_string();
        assert_eq!(ControllerParams::from_toml_str(&s).unwrap(), p());
        let partial = ControllerParams::from_toml_str("beta = 3.0\n").unwrap();
        assert_eq!(partial.beta, 3.0);
        assert_eq!(partial.k_d_ma, 10.0);
        let err = ControllerParams::from_toml_str("gamma = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("gamma"));
        assert!(ControllerParams::from_toml_str("bolus_clip_threshold = 9.0\n").is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let s = ControllerState {
            i_basal: 12.5,
            i_bolus: 4000.25,
            prev_cgm: Some(6.1),
            last_meal_time: None,
            last_sample_time: Some(1234.0),
        };
        let snap = s.to_snapshot();
        assert!(snap.starts_with("{\"version\":1,\"i_basal\":12.5,\"i_bolus\":4000.25"));
        assert_eq!(ControllerState::from_snapshot(&snap).unwrap(), s);
        assert!(
            ControllerState::from_snapshot(&snap.replace("\"version\":1", "\"version\":9"))
                .is_err()
        );
    }
}
