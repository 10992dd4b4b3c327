//! Optimal meal bolus by single shooting.
//!
//! A subject starts at the steady state for 6 mmol/L with its steady basal
//! rate held fixed. A meal and a bolus are given in the first control
//! interval; the cost is the integral over 12 h of
//!
//! ```text
//! rho(z) = 0.5 (z - z_set)^2 + kappa * 0.5 * max(0, z_min - z)^2
//! ```
//!
//! where `z` is the noise-free CGM output. The integral is carried as an
//! extra state through the same RK4 substeps as the model. The bolus is the
//! only decision variable. The cost is not unimodal in it (non-insulin
//! uptake falls off below 4.5 mmol/L), so the solver brackets, scans the
//! bracket on a uniform grid and refines the best local minima of the scan
//! by golden-section search.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, substeps};
use crate::par::map_indexed;
use crate::patient::model::{GSUB, NOISE};
use crate::patient::{
    derivatives_with, steady_state, DisturbanceInput, InsulinInput, PatientParams, PatientState,
    DEFAULT_SUBSTEP_MIN, N_STATES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// min
    pub horizon_min: f64,
    /// mmol/L
    pub setpoint: f64,
    /// mmol/L
    pub soft_lower: f64,
    pub kappa: f64,
    /// Control interval (min); the horizon holds `horizon_min / ts` of them.
    pub ts: f64,
    pub max_substep: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            horizon_min: 12.0 * 60.0,
            setpoint: 6.0,
            soft_lower: 3.9,
            kappa: 1e6,
            ts: 5.0,
            max_substep: DEFAULT_SUBSTEP_MIN,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if !(self.horizon_min > 0.0 && self.horizon_min.is_finite()) {
            return bad("horizon_min", "must be > 0");
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa", "must be >= 0");
        }
        if !(self.soft_lower < self.setpoint) {
            return bad("soft_lower", "must be below the setpoint");
        }
        if !(self.ts > 0.0 && self.max_substep > 0.0) {
            return bad("ts", "interval and substep must be > 0");
        }
        Ok(())
    }

    /// Number of control intervals in the horizon.
    pub fn intervals(&self) -> usize {
        (self.horizon_min / self.ts).round() as usize
    }

    pub fn penalty(&self, z: f64) -> f64 {
        let dev = z - self.setpoint;
        let below = f64::max(0.0, self.soft_lower - z);
        0.5 * dev * dev + self.kappa * 0.5 * below * below
    }
}

/// A single-meal bolus problem for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BolusProblem {
    pub theta: PatientParams,
    /// Carbohydrate flow rate over the first interval (g CHO/min).
    pub meal_rate: f64,
    pub spec: ObjectiveSpec,
    x0: PatientState,
    basal: f64,
}

/// Hard cap on the bolus flow rate searched (mU/min).
pub const BOLUS_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    /// Lowest CGM output over the horizon (mmol/L).
    pub min_output: f64,
}

impl BolusProblem {
    pub fn new(theta: PatientParams, meal_rate: f64, spec: ObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        if !(meal_rate.is_finite() && meal_rate >= 0.0) {
            return Err(Error::InvalidAnnouncement(format!(
                "meal rate must be >= 0, got {meal_rate}"
            )));
        }
        let (mut x0, basal) = steady_state(&theta, spec.setpoint)?;
        x0.x[NOISE] = 0.0;
        Ok(BolusProblem {
            theta,
            meal_rate,
            spec,
            x0,
            basal,
        })
    }

    /// Problem for a meal of `grams` eaten within the first interval.
    pub fn for_meal(theta: PatientParams, grams: f64, spec: ObjectiveSpec) -> Result<Self> {
        let ts = spec.ts;
        Self::new(theta, grams / ts, spec)
    }

    pub fn steady_basal(&self) -> f64 {
        self.basal
    }

    pub fn meal_grams(&self) -> f64 {
        self.meal_rate * self.spec.ts
    }

    /// Simulates the horizon for bolus flow rate `bolus` (mU/min).
    pub fn evaluate(&self, bolus: f64) -> Result<Evaluation> {
        if !(bolus.is_finite() && bolus >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "bolus",
                reason: format!("must be finite and >= 0, got {bolus}"),
            });
        }
        let spec = &self.spec;
        let theta = &self.theta;
        let n_sub = substeps(spec.ts, spec.max_substep);
        let h = spec.ts / n_sub as f64;
        let mut s = [0.0; N_STATES + 1];
        s[..N_STATES].copy_from_slice(&self.x0.x);
        let mut min_output = self.x0.x[GSUB];
        for k in 0..spec.intervals() {
            let (u, d) = if k == 0 {
                (
                    InsulinInput {
                        basal: self.basal,
                        bolus,
                    },
                    DisturbanceInput {
                        carb_rate: self.meal_rate,
                        exercise_intensity: 0.0,
                    },
                )
            } else {
                (
                    InsulinInput {
                        basal: self.basal,
                        bolus: 0.0,
                    },
                    DisturbanceInput::default(),
                )
            };
            let rhs = |y: &[f64; N_STATES + 1]| {
                let mut x = [0.0; N_STATES];
                x.copy_from_slice(&y[..N_STATES]);
                let dx = derivatives_with(&x, u, d, theta, &theta.exercise);
                let mut out = [0.0; N_STATES + 1];
                out[..N_STATES].copy_from_slice(&dx);
                out[N_STATES] = spec.penalty(x[GSUB] + x[NOISE]);
                out
            };
            for _ in 0..n_sub {
                s = rk4_step(&rhs, &s, h);
                min_output = min_output.min(s[GSUB] + s[NOISE]);
            }
        }
        let cost = s[N_STATES];
        if !cost.is_finite() {
            return Err(Error::Divergence {
                subject: 0,
                step: 0,
                detail: "non-finite objective".into(),
            });
        }
        Ok(Evaluation { cost, min_output })
    }

    pub fn objective(&self, bolus: f64) -> Result<f64> {
        self.evaluate(bolus).map(|e| e.cost)
    }
}

/// Relative width (of the initial bracket) to which the golden-section
/// search resolves the bolus.
pub const BRACKET_TOLERANCE: f64 = 1e-4;

/// Uniform scan of the bracket before refinement.
pub const SCAN_POINTS: usize = 256;

/// Local minima of the scan refined by golden-section search.
pub const REFINED_MINIMA: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolusSolution {
    /// mU/min over the first interval
    pub bolus: f64,
    pub cost: f64,
    /// Search interval `[0, hi]`; the cost at `hi` exceeds an interior value.
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Minimizes the objective over `bolus >= 0`.
pub fn optimal_bolus(problem: &BolusProblem) -> Result<BolusSolution> {
    let evals = Cell::new(0usize);
    let f = |b: f64| {
        evals.set(evals.get() + 1);
        problem.objective(b)
    };
    let f0 = f(0.0)?;
    // Start near 1 U per 10 g.
    let mut step = f64::max(10.0, 20.0 * problem.meal_grams());
    let (mut b, mut fb) = (step, f(step)?);
    // Grow the bracket until the cost rises again.
    let hi = if fb >= f0 {
        step
    } else {
        loop {
            step *= 2.0;
            let c = b + step;
            if c > BOLUS_CAP {
                return Err(Error::BracketFailure { cap: BOLUS_CAP });
            }
            let fc = f(c)?;
            if fc >= fb {
                break c;
            }
            (b, fb) = (c, fc);
        }
    };
    let h = hi / (SCAN_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|i| h * i as f64).collect();
    let fs = xs.iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
    let mut minima: Vec<usize> = (0..SCAN_POINTS)
        .filter(|&i| (i == 0 || fs[i] <= fs[i - 1]) && (i + 1 == SCAN_POINTS || fs[i] <= fs[i + 1]))
        .collect();
    minima.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)));
    let (mut bolus, mut cost) = (0.0, f0);
    for &i in minima.iter().take(REFINED_MINIMA) {
        let a = xs[i.saturating_sub(1)];
        let b = xs[(i + 1).min(SCAN_POINTS - 1)];
        let (x, fx) = golden_section(f, a, b, BRACKET_TOLERANCE * hi)?;
        let (x, fx) = if fs[i] < fx { (xs[i], fs[i]) } else { (x, fx) };
        if fx < cost {
            (bolus, cost) = (x, fx);
        }
    }
    Ok(BolusSolution {
        bolus,
        cost,
        bracket: (0.0, hi),
        evaluations: evals.get(),
    })
}

/// Golden-section search for a minimizer of `f` on `[a, b]` down to an
/// interval of width `tol`. Returns the best point evaluated.
pub fn golden_section(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Continuous two-segment linear fit through the origin,
/// `b(m) = s1 m + (s2 - s1) max(0, m - m_break)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    pub breakpoint: f64,
    pub slope_low: f64,
    pub slope_high: f64,
    /// RMS residual over RMS of the data.
    pub rel_rms: f64,
    /// Same measure for the best single line through the origin.
    pub linear_rel_rms: f64,
}

pub fn fit_two_piece(x: &[f64], y: &[f64]) -> Result<PiecewiseFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::EmptyInput("piecewise fit needs >= 3 points"));
    }
    let rms_y = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    let rel = |sse: f64| {
        if rms_y > 0.0 {
            (sse / y.len() as f64).sqrt() / rms_y
        } else {
            0.0
        }
    };
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let line = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let line_sse: f64 = x.iter().zip(y).map(|(a, b)| (b - line * a).powi(2)).sum();

    let mut best = PiecewiseFit {
        breakpoint: x[x.len() - 1],
        slope_low: line,
        slope_high: line,
        rel_rms: rel(line_sse),
        linear_rel_rms: rel(line_sse),
    };
    let mut best_sse = line_sse;
    for &m in &x[1..x.len() - 1] {
        // Basis: g1 = x, g2 = max(0, x - m).
        let (mut a11, mut a12, mut a22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let g2 = f64::max(0.0, xi - m);
            a11 += xi * xi;
            a12 += xi * g2;
            a22 += g2 * g2;
            r1 += xi * yi;
            r2 += g2 * yi;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() <= 1e-12 * a11 * a22 {
            continue;
        }
        let c1 = (a22 * r1 - a12 * r2) / det;
        let c2 = (a11 * r2 - a12 * r1) / det;
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(&xi, &yi)| (yi - c1 * xi - c2 * f64::max(0.0, xi - m)).powi(2))
            .sum();
        if sse < best_sse {
            best_sse = sse;
            best = PiecewiseFit {
                breakpoint: m,
                slope_low: c1,
                slope_high: c1 + c2,
                rel_rms: rel(sse),
                linear_rel_rms: rel(line_sse),
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// g CHO
    pub meal_grams: f64,
    /// mU/min over the first interval
    pub bolus_rate: f64,
    /// U
    pub bolus_units: f64,
    pub cost: f64,
    /// Lowest CGM output under the optimal bolus (mmol/L).
    pub min_output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub meal_grams: f64,
    pub bolus_units: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSweep {
    pub curve: Vec<CurvePoint>,
    /// Row-major over (meal, bolus).
    pub landscape: Vec<LandscapePoint>,
    pub bolus_grid_units: Vec<f64>,
    /// True when, for every meal column, the landscape minimum lies within
    /// one bolus grid cell of the optimal curve or costs no less than the
    /// curve point (nearly tied minima in separate basins).
    pub consistent: bool,
    pub fit: Option<PiecewiseFit>,
    /// Smallest meal whose optimal response dips below 4.5 mmol/L.
    pub first_meal_below_flux_threshold: Option<f64>,
}

/// Solves the bolus problem on every meal of `meal_grams` and evaluates the
/// cost on the `meal_grams x bolus_units` grid. Grid points run on
/// `workers` threads; assembly is in grid order.
pub fn curve_sweep(
    theta: &PatientParams,
    meal_grams: &[f64],
    bolus_units: &[f64],
    spec: &ObjectiveSpec,
    workers: usize,
) -> Result<CurveSweep> {
    if meal_grams.is_empty() {
        return Err(Error::EmptyInput("meal grid"));
    }
    let units_to_rate = 1000.0 / spec.ts;
    let problems = meal_grams
        .iter()
        .map(|&g| BolusProblem::for_meal(theta.clone(), g, spec.clone()))
        .collect::<Result<Vec<_>>>()?;

    let curve = map_indexed(problems.len(), workers, |i| -> Result<CurvePoint> {
        let p = &problems[i];
        let sol = optimal_bolus(p)?;
        let ev = p.evaluate(sol.bolus)?;
        Ok(CurvePoint {
            meal_grams: meal_grams[i],
            bolus_rate: sol.bolus,
            bolus_units: sol.bolus / units_to_rate,
            cost: sol.cost,
            min_output: ev.min_output,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let nb = bolus_units.len();
    let landscape = map_indexed(
        problems.len() * nb,
        workers,
        |k| -> Result<LandscapePoint> {
            let (i, j) = (k / nb, k % nb);
            Ok(LandscapePoint {
                meal_grams: meal_grams[i],
                bolus_units: bolus_units[j],
                cost: problems[i].objective(bolus_units[j] * units_to_rate)?,
            })
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let consistent = nb == 0
        || curve.iter().enumerate().all(|(i, pt)| {
            let col = &landscape[i * nb..(i + 1) * nb];
            let jmin = (0..nb)
                .min_by(|&a, &b| col[a].cost.total_cmp(&col[b].cost))
                .unwrap();
            let cell = if nb > 1 {
                (bolus_units[nb - 1] - bolus_units[0]) / (nb - 1) as f64
            } else {
                0.0
            };
            // Optimum beyond the grid: the edge is the best grid point.
            let target = pt.bolus_units.clamp(bolus_units[0], bolus_units[nb - 1]);
            (bolus_units[jmin] - target).abs() <= cell * (1.0 + 1e-9) || pt.cost <= col[jmin].cost
        });

    let fit = if curve.len() >= 3 {
        let x: Vec<f64> = curve.iter().map(|c| c.meal_grams).collect();
        let y: Vec<f64> = curve.iter().map(|c| c.bolus_units).collect();
        Some(fit_two_piece(&x, &y)?)
    } else {
        None
    };
    let first_meal_below_flux_threshold = curve
        .iter()
        .find(|c| c.min_output < theta.hovorka.f01_threshold)
        .map(|c| c.meal_grams);
    Ok(CurveSweep {
        curve,
        landscape,
        bolus_grid_units: bolus_units.to_vec(),
        consistent,
        fit,
        first_meal_below_flux_threshold,
    })
}
