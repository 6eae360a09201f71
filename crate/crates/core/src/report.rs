//! Line-delimited JSON and comparison-table exports.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{CohortReport, DynamicsSummary};
use crate::error::{Error, Result};
use crate::probit::{Matrix3, ProbitFit, COEFFICIENT_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// One fit, as written to a report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: Vec<Coefficient>,
    pub covariance: Matrix3,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub n_obs: u64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
}

impl FitReport {
    pub fn new(fit: &ProbitFit, range: Option<(f64, f64)>) -> Self {
        let coefficients = (0..3)
            .map(|i| Coefficient {
                name: COEFFICIENT_NAMES[i].to_string(),
                estimate: fit.beta[i],
                std_error: fit.standard_errors[i],
                z: fit.z_scores[i],
                p_value: fit.p_values[i],
            })
            .collect();
        FitReport {
            coefficients,
            covariance: fit.covariance,
            log_likelihood: fit.log_likelihood,
            gradient_norm: fit.gradient_norm,
            n_obs: fit.n_obs,
            iterations: fit.iterations,
            converged: fit.converged,
            warnings: fit.warnings.clone(),
            x_min: range.map(|r| r.0),
            x_max: range.map(|r| r.1),
        }
    }

    pub fn beta(&self) -> Result<[f64; 3]> {
        let mut beta = [0.0; 3];
        for (i, name) in COEFFICIENT_NAMES.iter().enumerate() {
            beta[i] = self
                .coefficients
                .iter()
                .find(|c| c.name == *name)
                .ok_or_else(|| Error::Input(format!("fit report lacks coefficient `{name}`")))?
                .estimate;
        }
        Ok(beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Fit(FitReport),
    Dynamics(DynamicsSummary),
    Cohort {
        name: String,
        n_pairs: usize,
        fit: Option<FitReport>,
        dynamics: Option<DynamicsSummary>,
        error: Option<String>,
    },
    Comparison {
        by_intercept: Vec<String>,
        by_peak: Vec<String>,
    },
}

pub fn write_lines<W: Write>(mut writer: W, lines: &[ReportLine]) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut writer, line).map_err(|e| Error::Input(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_lines<R: BufRead>(reader: R) -> Result<Vec<ReportLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("report line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// The first fit found in a report document.
pub fn first_fit(lines: &[ReportLine]) -> Option<&FitReport> {
    lines.iter().find_map(|l| match l {
        ReportLine::Fit(f) => Some(f),
        ReportLine::Cohort { fit: Some(f), .. } => Some(f),
        _ => None,
    })
}

pub fn cohort_lines(report: &CohortReport) -> Vec<ReportLine> {
    let mut lines: Vec<ReportLine> = report
        .cohorts
        .iter()
        .map(|c| match &c.analysis {
            Ok(a) => ReportLine::Cohort {
                name: c.name.clone(),
                n_pairs: c.n_pairs,
                fit: Some(FitReport::new(&a.fit, a.curve.present_range())),
                dynamics: Some(a.summary.clone()),
                error: None,
            },
            Err(e) => ReportLine::Cohort {
                name: c.name.clone(),
                n_pairs: c.n_pairs,
                fit: None,
                dynamics: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    lines.push(ReportLine::Comparison {
        by_intercept: report.by_intercept.clone(),
        by_peak: report.by_peak.clone(),
    });
    lines
}

/// `cohort,n_pairs,beta0,beta1,beta2,peak,peak_se,shape`, one row per cohort
/// in input order. Failed cohorts have empty numeric fields and shape `error`.
pub fn write_comparison_csv<W: Write>(writer: W, report: &CohortReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cohort", "n_pairs", "beta0", "beta1", "beta2", "peak", "peak_se", "shape",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for c in &report.cohorts {
        match &c.analysis {
            Ok(a) => w.write_record([
                c.name.clone(),
                c.n_pairs.to_string(),
                a.fit.beta[0].to_string(),
                a.fit.beta[1].to_string(),
                a.fit.beta[2].to_string(),
                opt(a.summary.peak_exposure),
                opt(a.summary.peak_se),
                a.summary.shape.to_string(),
            ])?,
            Err(_) => w.write_record([
                c.name.as_str(),
                &c.n_pairs.to_string(),
                "",
                "",
                "",
                "",
                "",
                "error",
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}
