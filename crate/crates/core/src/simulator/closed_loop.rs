use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerParams, ControllerState, Diagnostics, StepInput};
use crate::error::{Error, Result};
use crate::patient::{
    advance, insulin_free_steady_state, output, DisturbanceInput, InsulinInput, NoiseStream,
    PatientParams, PatientState, SubjectNoise, ZeroNoise, DEFAULT_SUBSTEP_MIN,
};
use crate::protocol::{to_zoh_series, Scenario};

/// Sensor saturation range (mmol/L) applied to readings fed to the
/// controller and logged.
pub const CGM_READ_MIN: f64 = 0.1;
pub const CGM_READ_MAX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// min since start
    pub t: f64,
    /// mmol/L
    pub cgm: f64,
    /// mU/min
    pub basal_rate: f64,
    /// mU/min
    pub bolus_rate: f64,
    /// g CHO/min
    pub carb_rate: f64,
    pub exercise_intensity: f64,
    /// Announced carbohydrates (g).
    pub announced_carbs: f64,
    /// Bolus factor after the step (mU kg/g CHO).
    pub alpha: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub step: usize,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub subject: usize,
    pub ts: f64,
    pub records: Vec<StepRecord>,
    pub clamp_events: Vec<ClampEvent>,
    /// Controller estimates after the last step.
    pub final_controller: ControllerState,
}

impl Trajectory {
    pub fn cgm(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.cgm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub subject: usize,
    /// Draw sensor noise from the subject's stream; zero noise otherwise.
    pub sensor_noise: bool,
    /// Maximum RK4 substep (min).
    pub max_substep: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            subject: 0,
            sensor_noise: true,
            max_substep: DEFAULT_SUBSTEP_MIN,
        }
    }
}

/// Runs the closed loop over `steps` control intervals (all of the scenario
/// when `None`), starting from the insulin-free steady state with zeroed
/// controller estimates.
pub fn run_closed_loop(
    patient: &PatientParams,
    scenario: &Scenario,
    controller_params: &ControllerParams,
    steps: Option<usize>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let x0 = insulin_free_steady_state(patient)?;
    run_closed_loop_from(patient, x0, scenario, controller_params, steps, opts)
}

pub fn run_closed_loop_from(
    patient: &PatientParams,
    x0: PatientState,
    scenario: &Scenario,
    controller_params: &ControllerParams,
    steps: Option<usize>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    patient.validate()?;
    let mut controller = Controller::new(controller_params.clone())?;
    let ts = controller_params.sample_interval_min;
    let zoh = to_zoh_series(scenario, ts)?;
    let n = match steps {
        Some(n) if n > zoh.len() => {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: format!("scenario covers {} intervals, {n} requested", zoh.len()),
            })
        }
        Some(n) => n,
        None => zoh.len(),
    };
    let mut noise: Box<dyn NoiseStream> = if opts.sensor_noise {
        Box::new(SubjectNoise::new(patient.rng_seed, opts.subject as u64))
    } else {
        Box::new(ZeroNoise)
    };
    let diverged = |step: usize, detail: String| Error::Divergence {
        subject: opts.subject,
        step,
        detail,
    };

    let mut x = x0;
    let mut records = Vec::with_capacity(n);
    let mut clamp_events = Vec::new();
    for k in 0..n {
        let t = k as f64 * ts;
        let z = output(&x, patient);
        if !z.is_finite() {
            return Err(diverged(k, "non-finite CGM output".into()));
        }
        let cgm = z.clamp(CGM_READ_MIN, CGM_READ_MAX);
        let cmd = controller
            .step(StepInput {
                t,
                cgm,
                announced_carbs: zoh.announced_carbs[k],
                bodyweight: patient.bodyweight,
            })
            .map_err(|e| diverged(k, e.to_string()))?;
        let u = InsulinInput {
            basal: cmd.basal_rate,
            bolus: cmd.bolus_rate,
        };
        let d = DisturbanceInput {
            carb_rate: zoh.carb_rate[k],
            exercise_intensity: zoh.exercise[k],
        };
        let adv = advance(&x, u, d, patient, ts, opts.max_substep, noise.as_mut()).map_err(
            |e| match e {
                Error::Divergence { detail, .. } => diverged(k, detail),
                other => other,
            },
        )?;
        if adv.clamped > 0 {
            clamp_events.push(ClampEvent {
                step: k,
                components: adv.clamped,
            });
        }
        x = adv.state;
        records.push(StepRecord {
            t,
            cgm,
            basal_rate: cmd.basal_rate,
            bolus_rate: cmd.bolus_rate,
            carb_rate: d.carb_rate,
            exercise_intensity: d.exercise_intensity,
            announced_carbs: zoh.announced_carbs[k],
            alpha: controller.state.i_bolus,
            diagnostics: cmd.diagnostics,
        });
    }
    Ok(Trajectory {
        subject: opts.subject,
        ts,
        records,
        clamp_events,
        final_controller: controller.state,
    })
}
