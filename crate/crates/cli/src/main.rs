use std::path::PathBuf;
use std::process::ExitCode;

use apsim::Error;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{to_u64, to_usize, Layers};

/// Exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "apsim",
    version,
    about = "Closed-loop artificial pancreas simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one subject and write its trajectory and report.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Population subject id (nominal patient when omitted).
        #[arg(long)]
        subject: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        /// Days simulated before the written window.
        #[arg(long)]
        start_day: Option<usize>,
        /// Replay a scenario event file.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Run a virtual clinical trial over a population.
    Trial {
        #[command(flatten)]
        common: Common,
        /// Subjects to sample.
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long)]
        warmup_weeks: Option<usize>,
        /// Also write every subject's trajectory.
        #[arg(long)]
        trajectories: bool,
    },
    /// Sweep optimal meal boluses and objective landscapes.
    BolusCurve {
        #[command(flatten)]
        common: Common,
        /// Population subject ids.
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<usize>>,
        #[arg(long)]
        meal_max: Option<f64>,
        #[arg(long)]
        meal_points: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Rebuild plot files and the targets table from a trial summary.
    Report {
        /// Trial output directory holding summary.json.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Override any configuration key, e.g. `trial.controller.k_p_ma=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Flat controller parameter file.
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Nominal patient parameter file.
    #[arg(long)]
    patient: Option<PathBuf>,
    /// Population file from an earlier trial.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long)]
    population_seed: Option<u64>,
    #[arg(long)]
    scenario_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_sensor_noise: bool,
}

impl Common {
    fn layers(&self) -> apsim::Result<Layers> {
        let mut l = Layers::from_file(self.config.as_deref())?;
        if let Some(p) = &self.controller {
            l.merge_file("trial.controller", p)?;
        }
        for s in &self.set {
            l.set_str(s)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        l.set_opt("population.patient_file", path(&self.patient))?;
        l.set_opt("population.file", path(&self.population))?;
        l.set_opt(
            "population.seed",
            self.population_seed.map(to_u64).transpose()?,
        )?;
        l.set_opt(
            "trial.scenario_seed",
            self.scenario_seed.map(to_u64).transpose()?,
        )?;
        l.set_opt("trial.workers", self.workers.map(to_usize).transpose()?)?;
        if self.no_sensor_noise {
            l.set("trial.sensor_noise", false.into())?;
        }
        Ok(l)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Divergence { .. }
        | Error::NoSteadyState(_)
        | Error::BracketFailure { .. }
        | Error::InvalidMeasurement(_)
        | Error::Sequencing { .. } => EXIT_DIVERGENCE,
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidAnnouncement(_)
        | Error::SamplingExhausted { .. }
        | Error::EmptyInput(_)
        | Error::Format { .. } => EXIT_CONFIG,
    }
}

fn run(cli: Cli) -> apsim::Result<u8> {
    match cli.command {
        Command::Simulate {
            common,
            subject,
            days,
            start_day,
            events,
        } => {
            let mut l = common.layers()?;
            l.set_opt("simulate.subject", subject.map(to_usize).transpose()?)?;
            l.set_opt("simulate.days", days.map(to_usize).transpose()?)?;
            l.set_opt("simulate.start_day", start_day.map(to_usize).transpose()?)?;
            l.set_opt(
                "simulate.events_file",
                events.map(|p| p.display().to_string()),
            )?;
            commands::simulate(&l.resolve()?, &common.out)
        }
        Command::Trial {
            common,
            subjects,
            weeks,
            warmup_weeks,
            trajectories,
        } => {
            let mut l = common.layers()?;
            l.set_opt("population.subjects", subjects.map(to_usize).transpose()?)?;
            l.set_opt("trial.weeks", weeks.map(to_usize).transpose()?)?;
            l.set_opt(
                "trial.warmup_weeks",
                warmup_weeks.map(to_usize).transpose()?,
            )?;
            commands::trial(&l.resolve()?, &common.out, trajectories)
        }
        Command::BolusCurve {
            common,
            subjects,
            meal_max,
            meal_points,
            kappa,
        } => {
            let mut l = common.layers()?;
            if let Some(ids) = subjects {
                let ids = ids
                    .into_iter()
                    .map(to_usize)
                    .collect::<apsim::Result<Vec<_>>>()?;
                l.set("bolus_curve.subjects", ids.into())?;
            }
            l.set_opt("bolus_curve.meal_max_g", meal_max)?;
            l.set_opt(
                "bolus_curve.meal_points",
                meal_points.map(to_usize).transpose()?,
            )?;
            l.set_opt("bolus_curve.objective.kappa", kappa)?;
            commands::bolus_curve(&l.resolve()?, &common.out)
        }
        Command::Report { input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            commands::report(&input, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("apsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
