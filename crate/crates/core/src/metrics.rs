//! Glycemic outcome metrics over CGM series.
//!
//! Ranges (mmol/L), with the boundary membership used everywhere:
//!
//! | range              | interval        |
//! |--------------------|-----------------|
//! | level 2 hypo       | `[0, 3.0)`      |
//! | level 1 hypo       | `[3.0, 3.9)`    |
//! | normoglycemia      | `[3.9, 10.0]`   |
//! | level 1 hyper      | `(10.0, 13.9]`  |
//! | level 2 hyper      | `(13.9, inf)`   |
//!
//! GV is the coefficient of variation (population SD over mean) and GMI uses
//! the standard regression `3.31 + 0.02392 * mean [mg/dL]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{mmol_to_mgdl, MINUTES_PER_DAY};

pub const HYPO2_UPPER: f64 = 3.0;
pub const NORMO_LOWER: f64 = 3.9;
pub const NORMO_UPPER: f64 = 10.0;
pub const HYPER2_LOWER: f64 = 13.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlycemicRange {
    Hypo2,
    Hypo1,
    Normo,
    Hyper1,
    Hyper2,
}

impl GlycemicRange {
    pub const ALL: [GlycemicRange; 5] = [
        GlycemicRange::Hypo2,
        GlycemicRange::Hypo1,
        GlycemicRange::Normo,
        GlycemicRange::Hyper1,
        GlycemicRange::Hyper2,
    ];

    pub fn classify(y: f64) -> GlycemicRange {
        if y < HYPO2_UPPER {
            GlycemicRange::Hypo2
        } else if y < NORMO_LOWER {
            GlycemicRange::Hypo1
        } else if y <= NORMO_UPPER {
            GlycemicRange::Normo
        } else if y <= HYPER2_LOWER {
            GlycemicRange::Hyper1
        } else {
            GlycemicRange::Hyper2
        }
    }
}

/// Percentage of samples in each range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RangePercentages {
    pub tbr2: f64,
    pub tbr1: f64,
    pub tir: f64,
    pub tar1: f64,
    pub tar2: f64,
}

impl RangePercentages {
    pub fn as_array(&self) -> [f64; 5] {
        [self.tbr2, self.tbr1, self.tir, self.tar1, self.tar2]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

pub fn time_in_ranges(cgm: &[f64]) -> Result<RangePercentages> {
    if cgm.is_empty() {
        return Err(Error::EmptyInput("CGM series"));
    }
    let mut counts = [0usize; 5];
    for &y in cgm {
        counts[GlycemicRange::classify(y) as usize] += 1;
    }
    let n = cgm.len() as f64;
    let pct = |c: usize| 100.0 * c as f64 / n;
    Ok(RangePercentages {
        tbr2: pct(counts[0]),
        tbr1: pct(counts[1]),
        tir: pct(counts[2]),
        tar1: pct(counts[3]),
        tar2: pct(counts[4]),
    })
}

/// Glucose management indicator (%) from mean glucose in mg/dL.
pub fn gmi(mean_glucose_mgdl: f64) -> f64 {
    3.31 + 0.02392 * mean_glucose_mgdl
}

/// Mean and coefficient of variation (%) of a nonempty series.
pub fn mean_and_cv(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::EmptyInput("series"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    Ok((mean, 100.0 * var.sqrt() / mean))
}

/// Pass flags for the consensus treatment targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetFlags {
    /// mean < 154 mg/dL
    pub mean_glucose: bool,
    /// GMI < 7 %
    pub gmi: bool,
    /// GV <= 36 %
    pub gv: bool,
    /// TAR level 2 < 5 %
    pub tar2: bool,
    /// TAR level 1 + 2 < 25 %
    pub tar12: bool,
    /// TIR > 70 %
    pub tir: bool,
    /// TBR level 1 + 2 < 4 %
    pub tbr12: bool,
    /// TBR level 2 < 1 %
    pub tbr2: bool,
    pub all_ranges: bool,
    pub all_except_gv: bool,
    pub all: bool,
}

impl TargetFlags {
    /// `(label, target, flag)` in table order.
    pub fn rows(&self) -> [(&'static str, &'static str, bool); 11] {
        [
            ("Average glucose", "< 154 mg/dL", self.mean_glucose),
            ("GMI", "< 7%", self.gmi),
            ("GV", "<= 36%", self.gv),
            ("TAR (level 2 hyperglycemia)", "< 5%", self.tar2),
            ("TAR (level 1 and 2 hyperglycemia)", "< 25%", self.tar12),
            ("TIR (normoglycemia)", "> 70%", self.tir),
            ("TBR (level 1 and 2 hypoglycemia)", "< 4%", self.tbr12),
            ("TBR (level 2 hypoglycemia)", "< 1%", self.tbr2),
            ("All TAR, TIR, and TBR targets", "", self.all_ranges),
            ("All targets except the GV target", "", self.all_except_gv),
            ("All targets", "", self.all),
        ]
    }
}

/// Evaluates every target predicate.
pub fn targets(
    ranges: &RangePercentages,
    mean_mgdl: f64,
    gmi_pct: f64,
    gv_pct: f64,
) -> TargetFlags {
    let mean_glucose = mean_mgdl < 154.0;
    let gmi = gmi_pct < 7.0;
    let gv = gv_pct <= 36.0;
    let tar2 = ranges.tar2 < 5.0;
    let tar12 = ranges.tar1 + ranges.tar2 < 25.0;
    let tir = ranges.tir > 70.0;
    let tbr12 = ranges.tbr1 + ranges.tbr2 < 4.0;
    let tbr2 = ranges.tbr2 < 1.0;
    let all_ranges = tar2 && tar12 && tir && tbr12 && tbr2;
    let all_except_gv = all_ranges && mean_glucose && gmi;
    TargetFlags {
        mean_glucose,
        gmi,
        gv,
        tar2,
        tar12,
        tir,
        tbr12,
        tbr2,
        all_ranges,
        all_except_gv,
        all: all_except_gv && gv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicReport {
    pub ranges: RangePercentages,
    pub mean_mmol: f64,
    pub mean_mgdl: f64,
    pub gmi: f64,
    pub gv: f64,
    pub min_cgm: f64,
    /// U/day
    pub tdd_basal: f64,
    /// U/day
    pub tdd_bolus: f64,
    pub targets: TargetFlags,
}

/// Average daily insulin dose (U/day) from flow rates (mU/min) held over
/// intervals of `ts` minutes.
pub fn total_daily_dose(rates: &[f64], ts: f64) -> f64 {
    if rates.is_empty() {
        return 0.0;
    }
    let units: f64 = rates.iter().map(|r| r * ts).sum::<f64>() / 1000.0;
    let days = rates.len() as f64 * ts / MINUTES_PER_DAY;
    units / days
}

impl GlycemicReport {
    /// Report for aligned CGM (mmol/L) and dose-rate (mU/min) series.
    pub fn from_series(cgm: &[f64], basal: &[f64], bolus: &[f64], ts: f64) -> Result<Self> {
        let ranges = time_in_ranges(cgm)?;
        let (mean_mmol, gv) = mean_and_cv(cgm)?;
        let mean_mgdl = mmol_to_mgdl(mean_mmol);
        let gmi_pct = gmi(mean_mgdl);
        Ok(GlycemicReport {
            ranges,
            mean_mmol,
            mean_mgdl,
            gmi: gmi_pct,
            gv,
            min_cgm: cgm.iter().copied().fold(f64::INFINITY, f64::min),
            tdd_basal: total_daily_dose(basal, ts),
            tdd_bolus: total_daily_dose(bolus, ts),
            targets: targets(&ranges, mean_mgdl, gmi_pct, gv),
        })
    }
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("box-plot values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(BoxStats {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Glucose grid (mmol/L) for cumulative distributions: 0.0, 0.1, ..., 25.0.
pub fn default_cdf_grid() -> Vec<f64> {
    (0..=250).map(|i| i as f64 / 10.0).collect()
}

/// Empirical CDF of one subject's CGM series evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCdf {
    pub subject: usize,
    /// Fraction of samples `<= grid[i]`.
    pub cdf: Vec<f64>,
    pub min_cgm: f64,
}

impl SubjectCdf {
    pub fn from_series(subject: usize, cgm: &[f64], grid: &[f64]) -> Result<Self> {
        if cgm.is_empty() {
            return Err(Error::EmptyInput("CGM series"));
        }
        let mut sorted = cgm.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let cdf = grid
            .iter()
            .map(|g| sorted.partition_point(|y| y <= g) as f64 / n)
            .collect();
        Ok(SubjectCdf {
            subject,
            cdf,
            min_cgm: sorted[0],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Pointwise minimum over subjects.
    pub lower: Vec<f64>,
    /// Pointwise maximum over subjects.
    pub upper: Vec<f64>,
    /// Pointwise 2.5 % quantile over subjects.
    pub band_lower: Vec<f64>,
    /// Pointwise 97.5 % quantile over subjects.
    pub band_upper: Vec<f64>,
    /// Subject with the lowest CGM sample.
    pub worst_case: usize,
    pub worst_case_cdf: Vec<f64>,
    pub worst_case_min: f64,
}

pub fn cumulative_distribution(grid: &[f64], subjects: &[SubjectCdf]) -> Result<CdfSummary> {
    if subjects.is_empty() {
        return Err(Error::EmptyInput("subject CDFs"));
    }
    let n = subjects.len() as f64;
    let mut summary = CdfSummary {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
        band_lower: Vec::with_capacity(grid.len()),
        band_upper: Vec::with_capacity(grid.len()),
        worst_case: 0,
        worst_case_cdf: Vec::new(),
        worst_case_min: f64::INFINITY,
    };
    let mut column = vec![0.0; subjects.len()];
    for i in 0..grid.len() {
        for (c, s) in column.iter_mut().zip(subjects) {
            *c = s.cdf[i];
        }
        summary.mean.push(column.iter().sum::<f64>() / n);
        column.sort_by(f64::total_cmp);
        summary.lower.push(column[0]);
        summary.upper.push(column[column.len() - 1]);
        summary.band_lower.push(quantile_sorted(&column, 0.025));
        summary.band_upper.push(quantile_sorted(&column, 0.975));
    }
    // Ties go to the lowest subject id.
    let worst = subjects
        .iter()
        .min_by(|a, b| {
            a.min_cgm
                .total_cmp(&b.min_cgm)
                .then(a.subject.cmp(&b.subject))
        })
        .unwrap();
    summary.worst_case = worst.subject;
    summary.worst_case_cdf = worst.cdf.clone();
    summary.worst_case_min = worst.min_cgm;
    Ok(summary)
}

/// Population-level summary of per-subject reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub subjects: usize,
    pub mean_ranges: RangePercentages,
    pub mean_glucose_mmol: f64,
    pub mean_gmi: f64,
    pub mean_gv: f64,
    pub mean_tdd_basal: f64,
    pub mean_tdd_bolus: f64,
    /// `(label, target, percent of subjects satisfying)` in table order.
    pub target_satisfaction: Vec<(String, String, f64)>,
}

pub fn aggregate(reports: &[GlycemicReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("reports"));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&GlycemicReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let labels = reports[0].targets.rows();
    let target_satisfaction = labels
        .iter()
        .enumerate()
        .map(|(i, (label, target, _))| {
            let passed = reports.iter().filter(|r| r.targets.rows()[i].2).count();
            (
                label.to_string(),
                target.to_string(),
                100.0 * passed as f64 / n,
            )
        })
        .collect();
    Ok(AggregateReport {
        subjects: reports.len(),
        mean_ranges: RangePercentages {
            tbr2: mean(&|r| r.ranges.tbr2),
            tbr1: mean(&|r| r.ranges.tbr1),
            tir: mean(&|r| r.ranges.tir),
            tar1: mean(&|r| r.ranges.tar1),
            tar2: mean(&|r| r.ranges.tar2),
        },
        mean_glucose_mmol: mean(&|r| r.mean_mmol),
        mean_gmi: mean(&|r| r.gmi),
        mean_gv: mean(&|r| r.gv),
        mean_tdd_basal: mean(&|r| r.tdd_basal),
        mean_tdd_bolus: mean(&|r| r.tdd_bolus),
        target_satisfaction,
    })
}
