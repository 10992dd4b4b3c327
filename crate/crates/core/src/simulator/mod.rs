//! Closed-loop simulation on the 5-minute control grid and the Monte Carlo
//! trial harness.

mod closed_loop;
mod population;
mod trial;

pub use closed_loop::{
    run_closed_loop, run_closed_loop_from, ClampEvent, SimOptions, StepRecord, Trajectory,
    CGM_READ_MAX, CGM_READ_MIN,
};
pub use population::{
    passes_time_constant_screen, sample_population, Dispersion, Population,
    TIME_CONSTANT_RATIO_LIMIT,
};
pub use trial::{
    run_subject, run_trial, summarize, SubjectOutcome, SubjectSummary, TrajectorySink, TrialConfig,
};
