//! Virtual subject: glucose-insulin ODE model with subcutaneous insulin
//! absorption, two-compartment carbohydrate absorption, a lagged CGM sensor
//! with additive AR(1) noise and a pluggable exercise effect.

pub mod exercise;
pub mod model;
pub mod noise;
pub mod params;

pub use exercise::{ExerciseEffect, ExerciseModifiers, NoExercise};
pub use model::{
    advance, advance_with, derivatives, derivatives_with, insulin_free_steady_state, output,
    steady_residual, steady_state, Advance, DisturbanceInput, InsulinInput, PatientState,
    DEFAULT_SUBSTEP_MIN, N_STATES,
};
pub use noise::{NoiseStream, SubjectNoise, ZeroNoise};
pub use params::{CgmParams, ExerciseParams, HovorkaParams, PatientParams, NOMINAL_PATIENT_TOML};
