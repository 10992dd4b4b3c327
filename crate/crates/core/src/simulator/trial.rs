use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::closed_loop::{run_closed_loop, SimOptions, Trajectory};
use super::population::Population;
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::metrics::{default_cdf_grid, GlycemicReport, SubjectCdf};
use crate::par::{map_indexed, mix_seed};
use crate::patient::DEFAULT_SUBSTEP_MIN;
use crate::protocol::{generate, ScenarioConfig, DAYS_PER_WEEK};
use crate::units::MINUTES_PER_DAY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub start_date: NaiveDate,
    pub weeks: usize,
    /// Leading weeks excluded from the metrics.
    pub warmup_weeks: usize,
    pub scenario_seed: u64,
    pub sensor_noise: bool,
    pub max_substep: f64,
    pub workers: usize,
    pub scenario: ScenarioConfig,
    pub controller: ControllerParams,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            weeks: 52,
            warmup_weeks: 4,
            scenario_seed: 1,
            sensor_noise: true,
            max_substep: DEFAULT_SUBSTEP_MIN,
            workers: 1,
            scenario: ScenarioConfig::default(),
            controller: ControllerParams::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::InvalidParameter {
                name: "weeks",
                reason: "must be >= 1".into(),
            });
        }
        if self.warmup_weeks >= self.weeks {
            return Err(Error::InvalidParameter {
                name: "warmup_weeks",
                reason: format!("must be < weeks ({})", self.weeks),
            });
        }
        if !(self.max_substep.is_finite() && self.max_substep > 0.0) {
            return Err(Error::InvalidParameter {
                name: "max_substep",
                reason: "must be > 0".into(),
            });
        }
        self.scenario.validate()?;
        self.controller.validate()
    }

    /// Index of the first control interval included in the metrics.
    pub fn eval_start_step(&self) -> usize {
        let per_day = (MINUTES_PER_DAY / self.controller.sample_interval_min).round() as usize;
        self.warmup_weeks * DAYS_PER_WEEK * per_day
    }

    /// Scenario seed of subject `id`.
    pub fn subject_scenario_seed(&self, id: usize) -> u64 {
        mix_seed(self.scenario_seed, id as u64)
    }
}

/// What a trial keeps per subject once its trajectory is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: usize,
    pub bodyweight: f64,
    pub report: GlycemicReport,
    pub cdf: SubjectCdf,
    pub steps: usize,
    pub eval_steps: usize,
    pub clamp_events: usize,
    /// Largest basal and bolus rates seen over the whole run (mU/min).
    pub max_basal: f64,
    pub max_bolus: f64,
    /// Bolus factor and nominal basal estimate at the end of the run.
    pub final_alpha: f64,
    pub final_basal_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectOutcome {
    pub subject: usize,
    pub result: std::result::Result<SubjectSummary, String>,
}

/// Summarizes a trajectory over steps `eval_start..`.
pub fn summarize(
    traj: &Trajectory,
    bodyweight: f64,
    eval_start: usize,
    grid: &[f64],
) -> Result<SubjectSummary> {
    let window = traj
        .records
        .get(eval_start..)
        .filter(|w| !w.is_empty())
        .ok_or(Error::EmptyInput("evaluation window"))?;
    let cgm: Vec<f64> = window.iter().map(|r| r.cgm).collect();
    let basal: Vec<f64> = window.iter().map(|r| r.basal_rate).collect();
    let bolus: Vec<f64> = window.iter().map(|r| r.bolus_rate).collect();
    let report = GlycemicReport::from_series(&cgm, &basal, &bolus, traj.ts)?;
    let last = traj.records.last().expect("nonempty");
    Ok(SubjectSummary {
        subject: traj.subject,
        bodyweight,
        report,
        cdf: SubjectCdf::from_series(traj.subject, &cgm, grid)?,
        steps: traj.records.len(),
        eval_steps: window.len(),
        clamp_events: traj.clamp_events.len(),
        max_basal: traj
            .records
            .iter()
            .map(|r| r.basal_rate)
            .fold(0.0, f64::max),
        max_bolus: traj
            .records
            .iter()
            .map(|r| r.bolus_rate)
            .fold(0.0, f64::max),
        final_alpha: last.alpha,
        final_basal_estimate: last.diagnostics.u_ba_nominal,
    })
}

/// Receives each finished trajectory during a trial.
pub type TrajectorySink<'a> = dyn Fn(&Trajectory) -> Result<()> + Sync + 'a;

/// Simulates one subject of a trial.
pub fn run_subject(population: &Population, id: usize, cfg: &TrialConfig) -> Result<Trajectory> {
    let patient = &population.subjects[id];
    let scenario = generate(
        cfg.subject_scenario_seed(id),
        cfg.start_date,
        cfg.weeks,
        patient.bodyweight,
        &cfg.scenario,
    )?;
    run_closed_loop(
        patient,
        &scenario,
        &cfg.controller,
        None,
        &SimOptions {
            subject: id,
            sensor_noise: cfg.sensor_noise,
            max_substep: cfg.max_substep,
        },
    )
}

/// Runs every subject independently on `cfg.workers` threads. Each full
/// trajectory is handed to `sink` (if any) and dropped; only summaries are
/// retained. Failures are recorded per subject. Results are in subject
/// order and do not depend on the worker count.
pub fn run_trial(
    population: &Population,
    cfg: &TrialConfig,
    sink: Option<&TrajectorySink<'_>>,
) -> Result<Vec<SubjectOutcome>> {
    if population.subjects.is_empty() {
        return Err(Error::EmptyInput("population"));
    }
    cfg.validate()?;
    let grid = default_cdf_grid();
    let eval_start = cfg.eval_start_step();
    Ok(map_indexed(population.subjects.len(), cfg.workers, |id| {
        let result = run_subject(population, id, cfg).and_then(|traj| {
            if let Some(sink) = sink {
                sink(&traj)?;
            }
            summarize(&traj, population.subjects[id].bodyweight, eval_start, &grid)
        });
        SubjectOutcome {
            subject: id,
            result: result.map_err(|e| e.to_string()),
        }
    }))
}
