use std::sync::Mutex;

use apsim::controller::ControllerParams;
use apsim::patient::PatientParams;
use apsim::protocol::{generate, Scenario, ScenarioConfig};
use apsim::report::{write_trajectory_csv, TrialReport};
use apsim::simulator::{
    run_closed_loop, run_trial, sample_population, Dispersion, Population, SimOptions, Trajectory,
    TrialConfig,
};
use apsim::Error;
use chrono::NaiveDate;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
}

fn quiet() -> SimOptions {
    SimOptions {
        sensor_noise: false,
        ..SimOptions::default()
    }
}

fn short_trial(weeks: usize, warmup: usize, workers: usize) -> TrialConfig {
    TrialConfig {
        weeks,
        warmup_weeks: warmup,
        workers,
        ..TrialConfig::default()
    }
}

#[test]
fn no_meal_run_stays_in_sensor_envelope() {
    let p = PatientParams::nominal();
    let scenario = Scenario::empty(start(), 1, p.bodyweight);
    let traj = run_closed_loop(
        &p,
        &scenario,
        &ControllerParams::default(),
        Some(576),
        &quiet(),
    )
    .unwrap();
    assert_eq!(traj.records.len(), 576);
    for r in &traj.records {
        assert!(r.basal_rate.is_finite() && r.bolus_rate.is_finite());
        assert!(r.cgm > 0.0 && r.cgm < 50.0);
    }
    // Starts insulin-free and high, so the loop must bring glucose down.
    let last = traj.records.last().unwrap().cgm;
    assert!(last < traj.records[0].cgm, "{last}");
}

#[test]
fn steps_are_evenly_spaced_and_doses_clipped() {
    let params = ControllerParams::default();
    let p = PatientParams::nominal();
    let scenario = generate(5, start(), 2, p.bodyweight, &ScenarioConfig::default()).unwrap();
    let traj = run_closed_loop(&p, &scenario, &params, None, &SimOptions::default()).unwrap();
    assert_eq!(traj.records.len(), 2 * 7 * 288);
    for (k, r) in traj.records.iter().enumerate() {
        assert_eq!(r.t, k as f64 * params.sample_interval_min);
        assert!((0.0..=params.u_max_basal).contains(&r.basal_rate));
        assert!((0.0..=params.u_max_bolus).contains(&r.bolus_rate));
    }
    assert!(traj.records.iter().any(|r| r.bolus_rate > 0.0));
}

#[test]
fn rerun_is_bit_identical() {
    let p = PatientParams::nominal();
    let scenario = generate(8, start(), 1, p.bodyweight, &ScenarioConfig::default()).unwrap();
    let run = || {
        run_closed_loop(
            &p,
            &scenario,
            &ControllerParams::default(),
            None,
            &SimOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let csv = |t: &Trajectory| {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, t).unwrap();
        buf
    };
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn requesting_more_steps_than_scenario_is_rejected() {
    let p = PatientParams::nominal();
    let scenario = Scenario::empty(start(), 1, p.bodyweight);
    let err = run_closed_loop(
        &p,
        &scenario,
        &ControllerParams::default(),
        Some(7 * 288 + 1),
        &quiet(),
    );
    assert!(matches!(
        err,
        Err(Error::InvalidParameter { name: "steps", .. })
    ));
}

#[test]
fn worker_count_does_not_change_trial_results() {
    let pop = sample_population(&PatientParams::nominal(), 12, 21, &Dispersion::default()).unwrap();
    let one = run_trial(&pop, &short_trial(2, 1, 1), None).unwrap();
    let many = run_trial(&pop, &short_trial(2, 1, 8), None).unwrap();
    assert_eq!(one, many);
    let bytes = |outcomes| {
        let mut buf = Vec::new();
        TrialReport::from_outcomes(outcomes)
            .unwrap()
            .write_summary_json(&mut buf)
            .unwrap();
        buf
    };
    assert_eq!(bytes(one), bytes(many));
}

#[test]
fn warmup_excluded_from_metrics_window() {
    let pop = sample_population(&PatientParams::nominal(), 1, 2, &Dispersion::default()).unwrap();
    let out = run_trial(&pop, &short_trial(52, 4, 1), None).unwrap();
    let s = out[0].result.as_ref().unwrap();
    assert_eq!(s.steps, 52 * 7 * 288);
    assert_eq!(s.eval_steps, 48 * 7 * 288);
    let out = run_trial(&pop, &short_trial(6, 4, 1), None).unwrap();
    assert_eq!(out[0].result.as_ref().unwrap().eval_steps, 2 * 7 * 288);
}

#[test]
fn hundred_subjects_run_without_divergence() {
    let pop = sample_population(&PatientParams::nominal(), 100, 4, &Dispersion::default()).unwrap();
    let out = run_trial(&pop, &short_trial(2, 1, 4), None).unwrap();
    assert_eq!(out.len(), 100);
    for o in &out {
        let s = o
            .result
            .as_ref()
            .unwrap_or_else(|e| panic!("subject {}: {e}", o.subject));
        assert_eq!(s.clamp_events, 0, "subject {}", o.subject);
    }
}

#[test]
fn failing_subject_is_isolated() {
    let mut pop: Population =
        sample_population(&PatientParams::nominal(), 3, 6, &Dispersion::default()).unwrap();
    pop.subjects[1].bodyweight = -1.0;
    let out = run_trial(&pop, &short_trial(2, 1, 2), None).unwrap();
    assert!(out[0].result.is_ok());
    assert!(out[1].result.as_ref().unwrap_err().contains("bodyweight"));
    assert!(out[2].result.is_ok());
    let report = TrialReport::from_outcomes(out).unwrap();
    assert_eq!(report.failed(), 1);
    assert_eq!(report.aggregate.unwrap().subjects, 2);
}

#[test]
fn trajectories_are_streamed_to_the_sink() {
    let pop = sample_population(&PatientParams::nominal(), 4, 1, &Dispersion::default()).unwrap();
    let seen = Mutex::new(Vec::new());
    let sink = |t: &Trajectory| {
        seen.lock().unwrap().push((t.subject, t.records.len()));
        Ok(())
    };
    run_trial(&pop, &short_trial(2, 1, 4), Some(&sink)).unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen, (0..4).map(|i| (i, 2 * 7 * 288)).collect::<Vec<_>>());
}

#[test]
fn sink_failure_marks_only_that_subject() {
    let pop = sample_population(&PatientParams::nominal(), 3, 1, &Dispersion::default()).unwrap();
    let sink = |t: &Trajectory| {
        if t.subject == 2 {
            Err(Error::Io("disk full".into()))
        } else {
            Ok(())
        }
    };
    let out = run_trial(&pop, &short_trial(2, 1, 1), Some(&sink)).unwrap();
    assert!(out[0].result.is_ok() && out[1].result.is_ok());
    assert!(out[2].result.as_ref().unwrap_err().contains("disk full"));
}

#[test]
fn empty_population_is_rejected() {
    let pop = Population {
        seed: 0,
        rejected_time_constant: 0,
        rejected_no_steady_state: 0,
        subjects: vec![],
    };
    assert!(matches!(
        run_trial(&pop, &TrialConfig::default(), None),
        Err(Error::EmptyInput(_))
    ));
}
