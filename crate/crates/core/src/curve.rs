//! Empirical listening probability per exposure index, with Wilson score
//! confidence bounds.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure_log::SequenceStore;
use crate::probit::inverse_cdf;

pub const DEFAULT_LEVEL: f64 = 0.95;
/// First exposure shown by default; the first play is often curiosity-driven.
pub const DEFAULT_X_MIN: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: u32,
    pub n: u64,
    pub k: u64,
    /// `None` when no event sits at this index.
    pub estimate: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureCurve {
    /// Confidence level of the bounds; unknown for tables read back from disk.
    pub level: Option<f64>,
    pub points: Vec<CurvePoint>,
}

impl ExposureCurve {
    /// Points with at least one event.
    pub fn present(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(|p| p.n > 0)
    }

    /// Smallest and largest index with data.
    pub fn present_range(&self) -> Option<(f64, f64)> {
        let first = self.present().next()?;
        let last = self.present().last()?;
        Some((first.x as f64, last.x as f64))
    }

    pub fn total_events(&self) -> u64 {
        self.points.iter().map(|p| p.n).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "n", "k", "p_hat", "ci_low", "ci_high"])?;
        for p in &self.points {
            let est = match p.estimate {
                Some(e) => [
                    e.p_hat.to_string(),
                    e.ci_low.to_string(),
                    e.ci_high.to_string(),
                ],
                None => Default::default(),
            };
            w.write_record([
                p.x.to_string(),
                p.n.to_string(),
                p.k.to_string(),
                est[0].clone(),
                est[1].clone(),
                est[2].clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a curve table. Rows with `n = 0` or empty estimate fields are
    /// kept as absent points.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: u32,
            n: u64,
            k: u64,
            p_hat: Option<f64>,
            ci_low: Option<f64>,
            ci_high: Option<f64>,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Input(format!("curve row {}: {e}", i + 1)))?;
            if row.k > row.n {
                return Err(Error::Input(format!("curve row {}: k exceeds n", i + 1)));
            }
            let estimate = match (row.n, row.p_hat, row.ci_low, row.ci_high) {
                (n, Some(p_hat), Some(ci_low), Some(ci_high)) if n > 0 => Some(Estimate {
                    p_hat,
                    ci_low,
                    ci_high,
                }),
                _ => None,
            };
            points.push(CurvePoint {
                x: row.x,
                n: row.n,
                k: row.k,
                estimate,
            });
        }
        if points.is_empty() {
            return Err(Error::NoData);
        }
        Ok(ExposureCurve {
            level: None,
            points,
        })
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "wilson interval needs n >= 1".into(),
        ));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    check_level(level)?;
    let z = inverse_cdf(1.0 - (1.0 - level) / 2.0)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if k == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let high = if k == n {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok((low, high))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )))
    }
}

/// Listening frequency at each exposure index in `x_min..=x_max`, pooled
/// over every pair of the store.
pub fn empirical_curve(
    store: &SequenceStore,
    x_min: u32,
    x_max: u32,
    level: f64,
) -> Result<ExposureCurve> {
    if x_min < 1 || x_min > x_max {
        return Err(Error::InvalidArgument(format!(
            "invalid exposure range {x_min}..={x_max}"
        )));
    }
    check_level(level)?;
    if store.is_empty() {
        return Err(Error::NoData);
    }
    let longest = store.sequences().iter().map(|s| s.len()).max().unwrap_or(0);
    if x_min as usize > longest {
        return Err(Error::EmptyRange);
    }

    let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for seq in store.sequences() {
        for ev in &seq.events {
            if (x_min..=x_max).contains(&ev.exposure_index) {
                let c = counts.entry(ev.exposure_index).or_default();
                c.0 += 1;
                c.1 += ev.listened as u64;
            }
        }
    }

    let points = (x_min..=x_max)
        .map(|x| {
            let (n, k) = counts.get(&x).copied().unwrap_or((0, 0));
            let estimate = if n == 0 {
                None
            } else {
                let (ci_low, ci_high) = wilson_interval(k, n, level)?;
                Some(Estimate {
                    p_hat: k as f64 / n as f64,
                    ci_low,
                    ci_high,
                })
            };
            Ok(CurvePoint { x, n, k, estimate })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExposureCurve {
        level: Some(level),
        points,
    })
}
