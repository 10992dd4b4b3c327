//! Machine-readable outputs: trajectories, trial summaries and plot data.
//!
//! Every file is plain CSV with a fixed header, or JSON with fields in
//! declaration order. Floats use the shortest round-trip representation, so
//! identical results give byte-identical files.
//!
//! | file                 | columns                                                    |
//! |----------------------|------------------------------------------------------------|
//! | trajectory CSV       | [`TRAJECTORY_COLUMNS`]                                     |
//! | `subjects.csv`       | [`SUBJECT_COLUMNS`], one row per subject + `aggregate` row |
//! | `summary.json`       | [`TrialSummaryFile`]                                       |
//! | `targets.csv`        | target, criterion, percent_satisfying (table order)        |
//! | `cdf.csv`            | [`CDF_COLUMNS`]                                            |
//! | `tdd_histogram.csv`  | bin_lower_u_day, bin_upper_u_day, basal_count, bolus_count |
//! | `tir_box.csv`        | range, min, q1, median, q3, max (percent)                  |
//! | curve CSV            | [`CURVE_COLUMNS`]                                          |
//! | landscape CSV        | [`LANDSCAPE_COLUMNS`]                                      |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bolus_opt::CurveSweep;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, box_stats, cumulative_distribution, default_cdf_grid, AggregateReport, BoxStats,
    CdfSummary, GlycemicReport, SubjectCdf,
};
use crate::simulator::{SubjectOutcome, SubjectSummary, Trajectory};

pub const TRAJECTORY_COLUMNS: [&str; 17] = [
    "t_min",
    "cgm_mmol_l",
    "basal_mu_min",
    "bolus_mu_min",
    "carb_g_min",
    "exercise_intensity",
    "announced_g",
    "alpha",
    "u_ba_nominal_mu_min",
    "w_ba",
    "w_ma",
    "w_bo",
    "e_ba",
    "e_bo",
    "p_ma",
    "d_ma",
    "clamped",
];

pub const SUBJECT_COLUMNS: [&str; 34] = [
    "subject",
    "status",
    "bodyweight_kg",
    "tbr2_pct",
    "tbr1_pct",
    "tir_pct",
    "tar1_pct",
    "tar2_pct",
    "mean_mmol_l",
    "mean_mg_dl",
    "gmi_pct",
    "gv_pct",
    "min_cgm_mmol_l",
    "tdd_basal_u_day",
    "tdd_bolus_u_day",
    "target_mean_glucose",
    "target_gmi",
    "target_gv",
    "target_tar2",
    "target_tar12",
    "target_tir",
    "target_tbr12",
    "target_tbr2",
    "target_all_ranges",
    "target_all_except_gv",
    "target_all",
    "steps",
    "eval_steps",
    "clamp_events",
    "max_basal_mu_min",
    "max_bolus_mu_min",
    "final_alpha",
    "final_basal_estimate_mu_min",
    "error",
];

pub const CDF_COLUMNS: [&str; 7] = [
    "glucose_mmol_l",
    "mean",
    "lower",
    "upper",
    "band_lower",
    "band_upper",
    "worst_case",
];

pub const CURVE_COLUMNS: [&str; 5] = [
    "meal_g",
    "bolus_mu_min",
    "bolus_u",
    "cost",
    "min_cgm_mmol_l",
];

pub const LANDSCAPE_COLUMNS: [&str; 3] = ["meal_g", "bolus_u", "cost"];

/// Width of the TDD histogram bins (U/day).
pub const TDD_BIN_WIDTH: f64 = 2.0;

pub const SUMMARY_FORMAT: &str = "apsim-trial-summary";
pub const SUMMARY_VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn csv_writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    Ok(out)
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv_writer(w, &TRAJECTORY_COLUMNS)?;
    let mut clamps = traj.clamp_events.iter().peekable();
    for (k, r) in traj.records.iter().enumerate() {
        let mut clamped = 0;
        while let Some(c) = clamps.next_if(|c| c.step == k) {
            clamped += c.components;
        }
        let d = &r.diagnostics;
        out.write_record([
            num(r.t),
            num(r.cgm),
            num(r.basal_rate),
            num(r.bolus_rate),
            num(r.carb_rate),
            num(r.exercise_intensity),
            num(r.announced_carbs),
            num(r.alpha),
            num(d.u_ba_nominal),
            num(d.w_ba),
            num(d.w_ma),
            num(d.w_bo),
            num(d.e_ba),
            num(d.e_bo),
            num(d.p_ma),
            num(d.d_ma),
            clamped.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// File name of a subject's trajectory.
pub fn trajectory_file_name(subject: usize) -> String {
    format!("trajectory_{subject:06}.csv")
}

fn report_fields(r: &GlycemicReport) -> Vec<String> {
    let t = &r.targets;
    let mut v = vec![
        num(r.ranges.tbr2),
        num(r.ranges.tbr1),
        num(r.ranges.tir),
        num(r.ranges.tar1),
        num(r.ranges.tar2),
        num(r.mean_mmol),
        num(r.mean_mgdl),
        num(r.gmi),
        num(r.gv),
        num(r.min_cgm),
        num(r.tdd_basal),
        num(r.tdd_bolus),
    ];
    v.extend(t.rows().iter().map(|row| flag(row.2)));
    v
}

/// Everything a trial leaves behind, minus trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummaryFile {
    pub format: String,
    pub version: u32,
    pub completed: usize,
    pub failed: usize,
    /// Absent when every subject failed.
    pub aggregate: Option<AggregateReport>,
    pub subjects: Vec<SubjectOutcome>,
}

/// Derived trial outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub outcomes: Vec<SubjectOutcome>,
    pub aggregate: Option<AggregateReport>,
    pub cdf: Option<CdfSummary>,
    /// One box per range, in range order (tbr2, tbr1, tir, tar1, tar2).
    pub range_boxes: Vec<(&'static str, BoxStats)>,
}

impl TrialReport {
    pub fn from_outcomes(outcomes: Vec<SubjectOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::EmptyInput("trial outcomes"));
        }
        let ok: Vec<&SubjectSummary> = outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .collect();
        let (aggregate, cdf, range_boxes) = if ok.is_empty() {
            (None, None, Vec::new())
        } else {
            let reports: Vec<GlycemicReport> = ok.iter().map(|s| s.report).collect();
            let cdfs: Vec<SubjectCdf> = ok.iter().map(|s| s.cdf.clone()).collect();
            let names = ["tbr2", "tbr1", "tir", "tar1", "tar2"];
            let boxes = names
                .iter()
                .enumerate()
                .map(|(i, &name)| {
                    let v: Vec<f64> = reports.iter().map(|r| r.ranges.as_array()[i]).collect();
                    box_stats(&v).map(|b| (name, b))
                })
                .collect::<Result<Vec<_>>>()?;
            (
                Some(aggregate(&reports)?),
                Some(cumulative_distribution(&default_cdf_grid(), &cdfs)?),
                boxes,
            )
        };
        Ok(TrialReport {
            outcomes,
            aggregate,
            cdf,
            range_boxes,
        })
    }

    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }

    pub fn summary_file(&self) -> TrialSummaryFile {
        TrialSummaryFile {
            format: SUMMARY_FORMAT.into(),
            version: SUMMARY_VERSION,
            completed: self.outcomes.len() - self.failed(),
            failed: self.failed(),
            aggregate: self.aggregate.clone(),
            subjects: self.outcomes.clone(),
        }
    }

    pub fn from_summary_json(text: &str) -> Result<Self> {
        let file: TrialSummaryFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("summary: {e}")))?;
        if file.format != SUMMARY_FORMAT || file.version != SUMMARY_VERSION {
            return Err(Error::Config(format!(
                "summary: unsupported format {} v{}",
                file.format, file.version
            )));
        }
        Self::from_outcomes(file.subjects)
    }

    pub fn write_summary_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.summary_file())
            .map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_subjects_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &SUBJECT_COLUMNS)?;
        for o in &self.outcomes {
            let row = match &o.result {
                Ok(s) => {
                    let mut row = vec![s.subject.to_string(), "ok".into(), num(s.bodyweight)];
                    row.extend(report_fields(&s.report));
                    row.extend([
                        s.steps.to_string(),
                        s.eval_steps.to_string(),
                        s.clamp_events.to_string(),
                        num(s.max_basal),
                        num(s.max_bolus),
                        num(s.final_alpha),
                        num(s.final_basal_estimate),
                        String::new(),
                    ]);
                    row
                }
                Err(e) => {
                    let mut row = vec![o.subject.to_string(), "failed".into()];
                    row.resize(SUBJECT_COLUMNS.len() - 1, String::new());
                    row.push(e.clone());
                    row
                }
            };
            out.write_record(&row).map_err(csv_err)?;
        }
        if let Some(a) = &self.aggregate {
            // Means over completed subjects; target columns hold percent satisfying.
            let r = &a.mean_ranges;
            let mut row = vec![
                "aggregate".to_string(),
                format!("{}/{}", a.subjects, self.outcomes.len()),
                String::new(),
                num(r.tbr2),
                num(r.tbr1),
                num(r.tir),
                num(r.tar1),
                num(r.tar2),
                num(a.mean_glucose_mmol),
                num(crate::units::mmol_to_mgdl(a.mean_glucose_mmol)),
                num(a.mean_gmi),
                num(a.mean_gv),
                String::new(),
                num(a.mean_tdd_basal),
                num(a.mean_tdd_bolus),
            ];
            row.extend(a.target_satisfaction.iter().map(|t| num(t.2)));
            row.resize(SUBJECT_COLUMNS.len(), String::new());
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_targets_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &["target", "criterion", "percent_satisfying"])?;
        if let Some(a) = &self.aggregate {
            for (label, criterion, pct) in &a.target_satisfaction {
                out.write_record([label.as_str(), criterion.as_str(), &num(*pct)])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_cdf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &CDF_COLUMNS)?;
        if let Some(c) = &self.cdf {
            for i in 0..c.grid.len() {
                out.write_record([
                    num(c.grid[i]),
                    num(c.mean[i]),
                    num(c.lower[i]),
                    num(c.upper[i]),
                    num(c.band_lower[i]),
                    num(c.band_upper[i]),
                    num(c.worst_case_cdf[i]),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_tdd_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(
            w,
            &[
                "bin_lower_u_day",
                "bin_upper_u_day",
                "basal_count",
                "bolus_count",
            ],
        )?;
        let ok: Vec<&SubjectSummary> = self
            .outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .collect();
        let bin = |v: f64| (v / TDD_BIN_WIDTH).floor().max(0.0) as usize;
        let top = ok
            .iter()
            .map(|s| bin(s.report.tdd_basal).max(bin(s.report.tdd_bolus)))
            .max();
        if let Some(top) = top {
            let mut basal = vec![0usize; top + 1];
            let mut bolus = vec![0usize; top + 1];
            for s in &ok {
                basal[bin(s.report.tdd_basal)] += 1;
                bolus[bin(s.report.tdd_bolus)] += 1;
            }
            for i in 0..=top {
                out.write_record([
                    num(i as f64 * TDD_BIN_WIDTH),
                    num((i + 1) as f64 * TDD_BIN_WIDTH),
                    basal[i].to_string(),
                    bolus[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_tir_box_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &["range", "min", "q1", "median", "q3", "max"])?;
        for (name, b) in &self.range_boxes {
            out.write_record([
                name.to_string(),
                num(b.min),
                num(b.q1),
                num(b.median),
                num(b.q3),
                num(b.max),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the summary and all plot files into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
        self.write_summary_json(file("summary.json")?)?;
        self.write_subjects_csv(file("subjects.csv")?)?;
        self.write_targets_csv(file("targets.csv")?)?;
        self.write_cdf_csv(file("cdf.csv")?)?;
        self.write_tdd_histogram_csv(file("tdd_histogram.csv")?)?;
        self.write_tir_box_csv(file("tir_box.csv")?)?;
        Ok(())
    }
}

pub fn write_curve_csv<W: Write>(w: W, sweep: &CurveSweep) -> Result<()> {
    let mut out = csv_writer(w, &CURVE_COLUMNS)?;
    for p in &sweep.curve {
        out.write_record([
            num(p.meal_grams),
            num(p.bolus_rate),
            num(p.bolus_units),
            num(p.cost),
            num(p.min_output),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_landscape_csv<W: Write>(w: W, sweep: &CurveSweep) -> Result<()> {
    let mut out = csv_writer(w, &LANDSCAPE_COLUMNS)?;
    for p in &sweep.landscape {
        out.write_record([num(p.meal_grams), num(p.bolus_units), num(p.cost)])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SubjectCdf;

    fn summary(id: usize, cgm: &[f64]) -> SubjectOutcome {
        let grid = default_cdf_grid();
        let basal = vec![10.0; cgm.len()];
        let bolus = vec![0.0; cgm.len()];
        SubjectOutcome {
            subject: id,
            result: Ok(SubjectSummary {
                subject: id,
                bodyweight: 70.0,
                report: GlycemicReport::from_series(cgm, &basal, &bolus, 5.0).unwrap(),
                cdf: SubjectCdf::from_series(id, cgm, &grid).unwrap(),
                steps: cgm.len(),
                eval_steps: cgm.len(),
                clamp_events: 0,
                max_basal: 10.0,
                max_bolus: 0.0,
                final_alpha: 0.0,
                final_basal_estimate: 10.0,
            }),
        }
    }

    fn lines(bytes: Vec<u8>) -> Vec<String> {
        String::from_utf8(bytes)
            .unwrap()
            .lines()
            .map(String::from)
            .collect()
    }

    #[test]
    fn subjects_csv_has_fixed_width_rows_and_footer() {
        let report = TrialReport::from_outcomes(vec![
            summary(0, &[5.0, 6.0, 7.0]),
            SubjectOutcome {
                subject: 1,
                result: Err("diverged, badly".into()),
            },
            summary(2, &[2.0, 6.0, 12.0]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        report.write_subjects_csv(&mut buf).unwrap();
        let mut rd = csv::ReaderBuilder::new().from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rd.headers().unwrap().len(), SUBJECT_COLUMNS.len());
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.len() == SUBJECT_COLUMNS.len()));
        assert_eq!(&rows[1][1], "failed");
        assert_eq!(&rows[1][SUBJECT_COLUMNS.len() - 1], "diverged, badly");
        assert_eq!(&rows[3][0], "aggregate");
        assert_eq!(&rows[3][1], "2/3");
        assert_eq!(report.failed(), 1);
    }

    #[test]
    fn targets_table_in_order() {
        let report = TrialReport::from_outcomes(vec![summary(0, &[5.0; 10])]).unwrap();
        let mut buf = Vec::new();
        report.write_targets_csv(&mut buf).unwrap();
        let l = lines(buf);
        assert_eq!(l.len(), 12);
        assert_eq!(l[1], "Average glucose,< 154 mg/dL,100");
        assert_eq!(l[11], "All targets,,100");
    }

    #[test]
    fn summary_json_roundtrip() {
        let report =
            TrialReport::from_outcomes(vec![summary(0, &[5.0, 9.0]), summary(1, &[4.0, 11.0])])
                .unwrap();
        let mut buf = Vec::new();
        report.write_summary_json(&mut buf).unwrap();
        let back = TrialReport::from_summary_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn summary_json_version_checked() {
        let bad = r#"{"format":"apsim-trial-summary","version":9,"completed":0,"failed":0,"aggregate":null,"subjects":[]}"#;
        assert!(matches!(
            TrialReport::from_summary_json(bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_failed_trial_still_reports() {
        let report = TrialReport::from_outcomes(vec![SubjectOutcome {
            subject: 0,
            result: Err("x".into()),
        }])
        .unwrap();
        assert!(report.aggregate.is_none());
        let mut buf = Vec::new();
        report.write_cdf_csv(&mut buf).unwrap();
        assert_eq!(lines(buf).len(), 1);
    }

    #[test]
    fn tdd_histogram_counts_every_subject_once() {
        let report =
            TrialReport::from_outcomes(vec![summary(0, &[5.0; 4]), summary(1, &[6.0; 4])]).unwrap();
        let mut buf = Vec::new();
        report.write_tdd_histogram_csv(&mut buf).unwrap();
        let l = lines(buf);
        // 10 mU/min = 14.4 U/day, bin [14, 16).
        assert_eq!(l.len(), 9);
        assert_eq!(l[8], "14,16,2,0");
        assert_eq!(l[1], "0,2,0,2");
    }
}
