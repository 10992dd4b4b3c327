//! Exercise effect hook.
//!
//! The model asks the hook for two multipliers at the current intensity.
//! The default hook ([`ExerciseParams`]) is linear in intensity; any other
//! exercise model can be plugged in through [`ExerciseEffect`].

use super::params::ExerciseParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExerciseModifiers {
    /// Multiplier on the non-insulin-dependent glucose flux.
    pub uptake: f64,
    /// Multiplier on insulin action on glucose transport and disposal.
    pub sensitivity: f64,
}

impl ExerciseModifiers {
    pub const REST: ExerciseModifiers = ExerciseModifiers {
        uptake: 1.0,
        sensitivity: 1.0,
    };
}

pub trait ExerciseEffect: Send + Sync {
    fn modifiers(&self, intensity: f64) -> ExerciseModifiers;
}

impl ExerciseEffect for ExerciseParams {
    fn modifiers(&self, intensity: f64) -> ExerciseModifiers {
        if intensity <= 0.0 {
            return ExerciseModifiers::REST;
        }
        ExerciseModifiers {
            uptake: 1.0 + self.uptake_gain * intensity,
            sensitivity: 1.0 + self.sensitivity_gain * intensity,
        }
    }
}

/// Hook that ignores exercise entirely.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoExercise;

impl ExerciseEffect for NoExercise {
    fn modifiers(&self, _intensity: f64) -> ExerciseModifiers {
        ExerciseModifiers::REST
    }
}
