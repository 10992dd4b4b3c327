//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line overrides. The resolved value is written back out as
//! `manifest.toml` and can be fed to `--config` to repeat a run.

use std::fs;
use std::path::{Path, PathBuf};

use apsim::bolus_opt::ObjectiveSpec;
use apsim::patient::PatientParams;
use apsim::simulator::{sample_population, Dispersion, Population, TrialConfig};
use apsim::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    /// Subjects to sample when no population file is given.
    pub subjects: usize,
    pub seed: u64,
    /// Population file written by an earlier trial.
    pub file: Option<PathBuf>,
    /// Nominal patient; the built-in nominal file when absent.
    pub patient_file: Option<PathBuf>,
    pub dispersion: Dispersion,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            subjects: 200,
            seed: 1,
            file: None,
            patient_file: None,
            dispersion: Dispersion::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    /// Population subject to simulate; the nominal patient when absent.
    pub subject: Option<usize>,
    /// Days simulated before the written window, letting the estimators adapt.
    pub start_day: usize,
    pub days: usize,
    /// Replay this event file instead of generating a scenario.
    pub events_file: Option<PathBuf>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            subject: None,
            start_day: 28,
            days: 4,
            events_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BolusCurveSpec {
    pub subjects: Vec<usize>,
    /// Meal grid: `meal_points` evenly spaced values on `[0, meal_max_g]`.
    pub meal_max_g: f64,
    pub meal_points: usize,
    /// Landscape bolus grid (U), spaced like the meal grid.
    pub bolus_max_u: f64,
    pub bolus_points: usize,
    pub objective: ObjectiveSpec,
}

impl Default for BolusCurveSpec {
    fn default() -> Self {
        BolusCurveSpec {
            subjects: (0..6).collect(),
            meal_max_g: 145.0,
            meal_points: 30,
            bolus_max_u: 15.0,
            bolus_points: 151,
            objective: ObjectiveSpec::default(),
        }
    }
}

impl BolusCurveSpec {
    pub fn meal_grid(&self) -> Vec<f64> {
        grid(self.meal_max_g, self.meal_points)
    }

    pub fn bolus_grid(&self) -> Vec<f64> {
        grid(self.bolus_max_u, self.bolus_points)
    }

    pub fn validate(&self) -> Result<()> {
        if self.meal_points < 1 || self.bolus_points < 2 {
            return Err(Error::InvalidParameter {
                name: "bolus_curve.meal_points",
                reason: "need >= 1 meal and >= 2 bolus grid points".into(),
            });
        }
        if !(self.meal_max_g >= 0.0 && self.bolus_max_u > 0.0) {
            return Err(Error::InvalidParameter {
                name: "bolus_curve.bolus_max_u",
                reason: "grid bounds must be positive".into(),
            });
        }
        self.objective.validate()
    }
}

fn grid(max: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| max * i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationSpec,
    pub trial: TrialConfig,
    pub simulate: SimulateSpec,
    pub bolus_curve: BolusCurveSpec,
}

/// Accumulates the file layer and command-line overrides as a TOML table.
#[derive(Debug, Default)]
pub struct Layers {
    table: Table,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Layers {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            Some(p) => read(p)?
                .parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => Table::new(),
        };
        Ok(Layers { table })
    }

    /// Sets a dotted key such as `trial.controller.k_p_ma`.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let mut table = &mut self.table;
        for part in &parts[..parts.len() - 1] {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        Ok(())
    }

    /// Applies a `key=value` override; the value is read as a TOML value
    /// and falls back to a plain string.
    pub fn set_str(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key.trim(), value)
    }

    pub fn set_opt<T: Into<Value>>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.into()),
            None => Ok(()),
        }
    }

    /// Merges every key of a flat TOML file under `prefix`.
    pub fn merge_file(&mut self, prefix: &str, path: &Path) -> Result<()> {
        let t = read(path)?
            .parse::<Table>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in t {
            self.set(&format!("{prefix}.{k}"), v)?;
        }
        Ok(())
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let cfg: RunConfig = Value::Table(self.table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.trial.validate()?;
        cfg.trial.scenario.validate()?;
        cfg.bolus_curve.validate()?;
        Ok(cfg)
    }
}

pub fn to_u64(v: u64) -> Result<Value> {
    i64::try_from(v)
        .map(Value::Integer)
        .map_err(|_| Error::Config(format!("{v} exceeds the largest TOML integer")))
}

pub fn to_usize(v: usize) -> Result<Value> {
    to_u64(v as u64)
}

impl RunConfig {
    pub fn to_manifest(&self, command: &str) -> String {
        format!(
            "# apsim {} {command}\n# Resolved configuration; rerun with `apsim {command} --config <this file>`.\n{}",
            env!("CARGO_PKG_VERSION"),
            toml::to_string(self).expect("config serializes")
        )
    }

    pub fn nominal_patient(&self) -> Result<PatientParams> {
        match &self.population.patient_file {
            Some(p) => PatientParams::from_toml_str(&read(p)?),
            None => Ok(PatientParams::nominal()),
        }
    }

    /// Loads the population file, or samples `n` subjects.
    pub fn population(&self, n: usize) -> Result<Population> {
        match &self.population.file {
            Some(p) => Population::from_toml_str(&read(p)?),
            None => {
                let nominal = self.nominal_patient()?;
                sample_population(
                    &nominal,
                    n,
                    self.population.seed,
                    &self.population.dispersion,
                )
            }
        }
    }
}
