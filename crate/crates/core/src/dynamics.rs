//! Characterization of fitted exposure curves: interest peak, curve shape,
//! and per-cohort comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::curve::{empirical_curve, ExposureCurve, DEFAULT_LEVEL, DEFAULT_X_MIN};
use crate::error::{Error, Result};
use crate::exposure_log::{Sequence, SequenceStore, DEFAULT_TRUNCATION_LIMIT};
use crate::probit::{fit_probit, FitConfig, ProbitData, ProbitFit};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    InvertedU,
    UShaped,
    MonotoneDecay,
    MonotoneRise,
    Flat,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Shape::InvertedU => "inverted_u",
            Shape::UShaped => "u_shaped",
            Shape::MonotoneDecay => "monotone_decay",
            Shape::MonotoneRise => "monotone_rise",
            Shape::Flat => "flat",
        };
        f.write_str(s)
    }
}

fn require_converged(fit: &ProbitFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NotConverged)
    }
}

/// Vertex `−β₁/(2β₂)` of the fitted latent and its delta-method standard error.
pub fn peak(fit: &ProbitFit) -> Result<(f64, f64)> {
    require_converged(fit)?;
    let [_, b1, b2] = fit.beta;
    if b2 == 0.0 || b2.abs() <= f64::EPSILON * b1.abs() {
        return Err(Error::NoCurvature);
    }
    let vertex = -b1 / (2.0 * b2);
    // gradient of the vertex w.r.t. (β₁, β₂)
    let g1 = -1.0 / (2.0 * b2);
    let g2 = b1 / (2.0 * b2 * b2);
    let c = &fit.covariance;
    let var = g1 * g1 * c[1][1] + 2.0 * g1 * g2 * c[1][2] + g2 * g2 * c[2][2];
    Ok((vertex, var.max(0.0).sqrt()))
}

pub fn classify_shape(fit: &ProbitFit, alpha: f64) -> Shape {
    let [_, b1, b2] = fit.beta;
    let sig1 = fit.p_values[1] < alpha;
    let sig2 = fit.p_values[2] < alpha;
    match (sig1, sig2) {
        (true, true) if b1 > 0.0 && b2 < 0.0 => Shape::InvertedU,
        (true, true) if b1 < 0.0 && b2 > 0.0 => Shape::UShaped,
        (true, false) if b1 < 0.0 => Shape::MonotoneDecay,
        (true, false) if b1 > 0.0 => Shape::MonotoneRise,
        _ => Shape::Flat,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    /// Present iff the quadratic term is significant.
    pub peak_exposure: Option<f64>,
    pub peak_se: Option<f64>,
    /// Vertex of the fitted latent whenever it has curvature, significant or not.
    pub vertex: Option<f64>,
    /// Whether the peak lies inside the fitted exposure range; `None` when
    /// there is no peak or no range was given.
    pub peak_in_range: Option<bool>,
    pub shape: Shape,
    pub significance_level: f64,
}

pub fn summarize(
    fit: &ProbitFit,
    alpha: f64,
    fit_range: Option<(f64, f64)>,
) -> Result<DynamicsSummary> {
    require_converged(fit)?;
    let shape = classify_shape(fit, alpha);
    let (vertex, vertex_se) = match peak(fit) {
        Ok((v, se)) => (Some(v), Some(se)),
        Err(Error::NoCurvature) => (None, None),
        Err(e) => return Err(e),
    };
    let curved = fit.p_values[2] < alpha && vertex.is_some();
    let peak_exposure = vertex.filter(|_| curved);
    let peak_se = vertex_se.filter(|_| curved);
    let peak_in_range = match (peak_exposure, fit_range) {
        (Some(p), Some((lo, hi))) => Some(p >= lo && p <= hi),
        _ => None,
    };
    Ok(DynamicsSummary {
        peak_exposure,
        peak_se,
        vertex,
        peak_in_range,
        shape,
        significance_level: alpha,
    })
}

/// Knobs shared by single-curve and cohort analyses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub x_min: u32,
    pub x_max: u32,
    pub level: f64,
    pub alpha: f64,
    pub fit: FitConfig,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            x_min: DEFAULT_X_MIN,
            x_max: DEFAULT_TRUNCATION_LIMIT as u32,
            level: DEFAULT_LEVEL,
            alpha: DEFAULT_ALPHA,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub curve: ExposureCurve,
    pub fit: ProbitFit,
    pub summary: DynamicsSummary,
}

/// Curve, probit fit and summary for one store.
pub fn analyze(store: &SequenceStore, opts: &AnalysisOptions) -> Result<Analysis> {
    let curve = empirical_curve(store, opts.x_min, opts.x_max, opts.level)?;
    let data = ProbitData::from_curve(&curve)?;
    let fit = fit_probit(&data, &opts.fit)?;
    let summary = summarize(&fit, opts.alpha, data.x_range())?;
    Ok(Analysis {
        curve,
        fit,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Membership {
    Users {
        ids: BTreeSet<String>,
    },
    Tracks {
        ids: BTreeSet<String>,
    },
    /// Users whose age satisfies `above < age <= up_to`; open ends allowed.
    AgeRange {
        above: Option<f64>,
        up_to: Option<f64>,
    },
}

impl Membership {
    fn contains_age(&self, age: f64) -> bool {
        match self {
            Membership::AgeRange { above, up_to } => {
                above.is_none_or(|a| age > a) && up_to.is_none_or(|u| age <= u)
            }
            _ => false,
        }
    }

    fn by_track(&self) -> bool {
        matches!(self, Membership::Tracks { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub membership: Membership,
}

/// Three age classes: up to 21, over 21 up to 27, over 27.
pub fn default_age_cohorts() -> Vec<CohortSpec> {
    let range = |name: &str, above, up_to| CohortSpec {
        name: name.into(),
        membership: Membership::AgeRange { above, up_to },
    };
    vec![
        range("age<=21", None, Some(21.0)),
        range("21<age<=27", Some(21.0), Some(27.0)),
        range("age>27", Some(27.0), None),
    ]
}

/// `user_id → age` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserAttributes {
    pub ages: BTreeMap<String, f64>,
}

impl UserAttributes {
    /// Reads a `user_id,age` table; rows with a missing or unparsable age are skipped.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("attribute table is missing column `{name}`")))
        };
        let (uid, age) = (col("user_id")?, col("age")?);
        let mut ages = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            if let (Some(u), Some(Ok(a))) = (row.get(uid), row.get(age).map(str::parse::<f64>)) {
                if a.is_finite() {
                    ages.insert(u.to_string(), a);
                }
            }
        }
        Ok(UserAttributes { ages })
    }
}

/// Reads a `cohort,user_id` or `cohort,track_id` membership table into
/// cohort specs, in order of first appearance.
pub fn read_membership_csv<R: Read>(reader: R) -> Result<Vec<CohortSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let cohort = find("cohort")
        .ok_or_else(|| Error::Input("membership table is missing column `cohort`".into()))?;
    let (id_col, by_track) = match (find("user_id"), find("track_id")) {
        (Some(c), None) => (c, false),
        (None, Some(c)) => (c, true),
        _ => {
            return Err(Error::Input(
                "membership table needs exactly one of `user_id` or `track_id`".into(),
            ))
        }
    };
    let mut order: Vec<String> = Vec::new();
    let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let (Some(name), Some(id)) = (row.get(cohort), row.get(id_col)) else {
            return Err(Error::Input("short membership row".into()));
        };
        if !sets.contains_key(name) {
            order.push(name.to_string());
        }
        sets.entry(name.to_string())
            .or_default()
            .insert(id.to_string());
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let ids = sets.remove(&name).unwrap_or_default();
            let membership = if by_track {
                Membership::Tracks { ids }
            } else {
                Membership::Users { ids }
            };
            CohortSpec { name, membership }
        })
        .collect())
}

enum Resolved {
    Users(BTreeSet<String>),
    Tracks(BTreeSet<String>),
}

fn resolve(spec: &CohortSpec, attrs: Option<&UserAttributes>) -> Result<Resolved> {
    Ok(match &spec.membership {
        Membership::Users { ids } => Resolved::Users(ids.clone()),
        Membership::Tracks { ids } => Resolved::Tracks(ids.clone()),
        Membership::AgeRange { .. } => {
            let attrs = attrs.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "cohort `{}` needs a user attribute table",
                    spec.name
                ))
            })?;
            Resolved::Users(
                attrs
                    .ages
                    .iter()
                    .filter(|(_, a)| spec.membership.contains_age(**a))
                    .map(|(u, _)| u.clone())
                    .collect(),
            )
        }
    })
}

fn check_disjoint(cohorts: &[CohortSpec], resolved: &[Resolved]) -> Result<()> {
    let by_track = cohorts[0].membership.by_track();
    if cohorts.iter().any(|c| c.membership.by_track() != by_track) {
        return Err(Error::InvalidArgument(
            "cohorts must all partition users or all partition tracks".into(),
        ));
    }
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for (spec, set) in cohorts.iter().zip(resolved) {
        let ids = match set {
            Resolved::Users(s) | Resolved::Tracks(s) => s,
        };
        for id in ids {
            if let Some(prev) = owner.insert(id, &spec.name) {
                return Err(Error::OverlappingCohorts(format!(
                    "`{id}` belongs to `{prev}` and `{}`",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CohortResult {
    pub name: String,
    pub n_pairs: usize,
    pub analysis: std::result::Result<Analysis, String>,
}

#[derive(Debug, Clone)]
pub struct CohortReport {
    /// In the order the cohorts were given.
    pub cohorts: Vec<CohortResult>,
    /// Successful cohorts by descending intercept.
    pub by_intercept: Vec<String>,
    /// Cohorts with a peak, by ascending peak exposure.
    pub by_peak: Vec<String>,
}

impl CohortReport {
    pub fn get(&self, name: &str) -> Option<&CohortResult> {
        self.cohorts.iter().find(|c| c.name == name)
    }
}

/// Splits the store into cohorts and analyzes each one separately. Cohorts
/// whose data is missing or cannot be fitted keep their error in the report.
pub fn compare_cohorts(
    store: &SequenceStore,
    cohorts: &[CohortSpec],
    attrs: Option<&UserAttributes>,
    opts: &AnalysisOptions,
) -> Result<CohortReport> {
    if cohorts.len() < 2 {
        return Err(Error::InvalidArgument(
            "a comparison needs at least two cohorts".into(),
        ));
    }
    let mut names = BTreeSet::new();
    if let Some(dup) = cohorts.iter().find(|c| !names.insert(c.name.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "duplicate cohort name `{}`",
            dup.name
        )));
    }
    let resolved = cohorts
        .iter()
        .map(|c| resolve(c, attrs))
        .collect::<Result<Vec<_>>>()?;
    check_disjoint(cohorts, &resolved)?;

    let results: Vec<CohortResult> = cohorts
        .iter()
        .zip(&resolved)
        .map(|(spec, set)| {
            let keep = |s: &Sequence| match set {
                Resolved::Users(ids) => ids.contains(&s.user_id),
                Resolved::Tracks(ids) => ids.contains(&s.track_id),
            };
            let sub = store.retain(keep);
            let analysis = if sub.is_empty() {
                Err("no matching data".to_string())
            } else {
                analyze(&sub, opts).map_err(|e| e.to_string())
            };
            CohortResult {
                name: spec.name.clone(),
                n_pairs: sub.n_pairs(),
                analysis,
            }
        })
        .collect();

    let mut by_intercept: Vec<(&str, f64)> = results
        .iter()
        .filter_map(|r| {
            r.analysis
                .as_ref()
                .ok()
                .map(|a| (r.name.as_str(), a.fit.beta[0]))
        })
        .collect();
    by_intercept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let mut by_peak: Vec<(&str, f64)> = results
        .iter()
        .filter_map(|r| {
            r.analysis
                .as_ref()
                .ok()?
                .summary
                .peak_exposure
                .map(|p| (r.name.as_str(), p))
        })
        .collect();
    by_peak.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));

    Ok(CohortReport {
        by_intercept: by_intercept
            .into_iter()
            .map(|(n, _)| n.to_string())
            .collect(),
        by_peak: by_peak.into_iter().map(|(n, _)| n.to_string()).collect(),
        cohorts: results,
    })
}
