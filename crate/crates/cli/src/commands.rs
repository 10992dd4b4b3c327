use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use apsim::bolus_opt::curve_sweep;
use apsim::metrics::default_cdf_grid;
use apsim::protocol::{generate, read_events, write_events, DAYS_PER_WEEK};
use apsim::report::{
    trajectory_file_name, write_curve_csv, write_landscape_csv, write_trajectory_csv, TrialReport,
};
use apsim::simulator::{run_closed_loop, run_trial, summarize, SimOptions, Trajectory};
use apsim::units::MINUTES_PER_DAY;
use apsim::{Error, Result};

use crate::config::RunConfig;
use crate::{EXIT_OK, EXIT_PARTIAL};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn prepare(out: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    write_text(&out.join("manifest.toml"), &cfg.to_manifest(command))
}

fn print_targets(report: &TrialReport) {
    let Some(a) = &report.aggregate else {
        println!("no completed subjects");
        return;
    };
    println!(
        "subjects {}/{}  mean TIR {:.1}%  TBR2 {:.2}%  TDD basal {:.1} U/day  bolus {:.1} U/day",
        a.subjects,
        report.outcomes.len(),
        a.mean_ranges.tir,
        a.mean_ranges.tbr2,
        a.mean_tdd_basal,
        a.mean_tdd_bolus,
    );
    for (label, criterion, pct) in &a.target_satisfaction {
        println!("{label:<36} {criterion:<12} {pct:>7.2}%");
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let spec = &cfg.simulate;
    if spec.days == 0 {
        return Err(Error::InvalidParameter {
            name: "simulate.days",
            reason: "must be >= 1".into(),
        });
    }
    let trial = &cfg.trial;
    let id = spec.subject.unwrap_or(0);
    let patient = match spec.subject {
        Some(i) => {
            let pop = cfg.population(i + 1)?;
            pop.subjects
                .get(i)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter {
                    name: "simulate.subject",
                    reason: format!("population has {} subjects", pop.subjects.len()),
                })?
        }
        None => cfg.nominal_patient()?,
    };
    let total_days = spec.start_day + spec.days;
    let scenario = match &spec.events_file {
        Some(p) => read_events(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        )?,
        None => generate(
            trial.subject_scenario_seed(id),
            trial.start_date,
            total_days.div_ceil(DAYS_PER_WEEK),
            patient.bodyweight,
            &trial.scenario,
        )?,
    };
    prepare(out, cfg, "simulate")?;

    let per_day = (MINUTES_PER_DAY / trial.controller.sample_interval_min).round() as usize;
    let traj = run_closed_loop(
        &patient,
        &scenario,
        &trial.controller,
        Some(total_days * per_day),
        &SimOptions {
            subject: id,
            sensor_noise: trial.sensor_noise,
            max_substep: trial.max_substep,
        },
    )?;
    let first = spec.start_day * per_day;
    let window = Trajectory {
        subject: traj.subject,
        ts: traj.ts,
        records: traj.records[first..].to_vec(),
        clamp_events: traj
            .clamp_events
            .iter()
            .filter(|c| c.step >= first)
            .map(|c| apsim::simulator::ClampEvent {
                step: c.step - first,
                components: c.components,
            })
            .collect(),
        final_controller: traj.final_controller.clone(),
    };
    write_trajectory_csv(create(&out.join("trajectory.csv"))?, &window)?;
    let summary = summarize(&traj, patient.bodyweight, first, &default_cdf_grid())?;
    let mut w = create(&out.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    write_text(&out.join("patient.toml"), &patient.to_toml_string())?;
    write_text(&out.join("scenario.events"), &write_events(&scenario))?;
    write_text(
        &out.join("controller_state.json"),
        &(traj.final_controller.to_snapshot() + "\n"),
    )?;
    let r = &summary.report;
    println!(
        "subject {id}: {} days, TIR {:.1}%, TBR {:.2}%, TAR {:.1}%, mean {:.2} mmol/L, min {:.2} mmol/L",
        spec.days,
        r.ranges.tir,
        r.ranges.tbr1 + r.ranges.tbr2,
        r.ranges.tar1 + r.ranges.tar2,
        r.mean_mmol,
        r.min_cgm,
    );
    Ok(EXIT_OK)
}

pub fn trial(cfg: &RunConfig, out: &Path, trajectories: bool) -> Result<u8> {
    let pop = cfg.population(cfg.population.subjects)?;
    prepare(out, cfg, "trial")?;
    write_text(&out.join("population.toml"), &pop.to_toml_string())?;
    let traj_dir = out.join("trajectories");
    if trajectories {
        fs::create_dir_all(&traj_dir)?;
    }
    let sink = |t: &Trajectory| {
        write_trajectory_csv(create(&traj_dir.join(trajectory_file_name(t.subject)))?, t)
    };
    let outcomes = run_trial(&pop, &cfg.trial, trajectories.then_some(&sink as _))?;
    let report = TrialReport::from_outcomes(outcomes)?;
    report.write_all(out)?;
    print_targets(&report);
    let failed = report.failed();
    if failed > 0 {
        for o in &report.outcomes {
            if let Err(e) = &o.result {
                eprintln!("apsim: subject {} failed: {e}", o.subject);
            }
        }
        eprintln!(
            "apsim: {failed} of {} subjects failed",
            report.outcomes.len()
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

pub fn bolus_curve(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let spec = &cfg.bolus_curve;
    if spec.subjects.is_empty() {
        return Err(Error::EmptyInput("bolus_curve.subjects"));
    }
    let needed = spec.subjects.iter().max().unwrap() + 1;
    let pop = cfg.population(needed)?;
    if let Some(&bad) = spec.subjects.iter().find(|&&i| i >= pop.subjects.len()) {
        return Err(Error::InvalidParameter {
            name: "bolus_curve.subjects",
            reason: format!(
                "subject {bad} not in a population of {}",
                pop.subjects.len()
            ),
        });
    }
    prepare(out, cfg, "bolus-curve")?;
    let meals = spec.meal_grid();
    let boluses = spec.bolus_grid();
    let mut summary = csv_summary(create(&out.join("bolus_summary.csv"))?)?;
    for &id in &spec.subjects {
        let sweep = curve_sweep(
            &pop.subjects[id],
            &meals,
            &boluses,
            &spec.objective,
            cfg.trial.workers,
        )?;
        write_curve_csv(create(&out.join(format!("curve_{id:06}.csv")))?, &sweep)?;
        write_landscape_csv(create(&out.join(format!("landscape_{id:06}.csv")))?, &sweep)?;
        let fit = sweep.fit;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        summary
            .write_record([
                id.to_string(),
                u8::from(sweep.consistent).to_string(),
                opt(fit.map(|f| f.breakpoint)),
                opt(fit.map(|f| f.slope_low)),
                opt(fit.map(|f| f.slope_high)),
                opt(fit.map(|f| f.rel_rms)),
                opt(fit.map(|f| f.linear_rel_rms)),
                opt(sweep.first_meal_below_flux_threshold),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        println!(
            "subject {id}: consistent {}, hinge at {} g, rel. RMS {}",
            sweep.consistent,
            opt(fit.map(|f| f.breakpoint)),
            opt(fit.map(|f| f.rel_rms)),
        );
    }
    summary.flush()?;
    Ok(EXIT_OK)
}

fn csv_summary<W: Write>(w: W) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "subject",
        "consistent",
        "fit_breakpoint_g",
        "fit_slope_low_u_per_g",
        "fit_slope_high_u_per_g",
        "fit_rel_rms",
        "linear_rel_rms",
        "first_meal_below_flux_threshold_g",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}

pub fn report(input: &Path, out: &Path) -> Result<u8> {
    let path = input.join("summary.json");
    let text =
        fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let report = TrialReport::from_summary_json(&text)?;
    report.write_all(out)?;
    print_targets(&report);
    Ok(EXIT_OK)
}
