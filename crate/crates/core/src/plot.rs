//! SVG rendering of a curve table, optionally overlaid with a fitted
//! probability curve.

use std::fmt::Write;

use crate::curve::ExposureCurve;
use crate::error::{Error, Result};
use crate::probit::{latent, normal, Beta};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick step from {1, 2, 5}·10^k giving at most ~8 ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Points with their 95% (or table-level) band as a shaded polygon, and the
/// fitted Φ(ŷ*(x)) as a line when `fit` is given.
pub fn render_svg(curve: &ExposureCurve, fit: Option<&Beta>, title: &str) -> Result<String> {
    let pts: Vec<_> = curve
        .present()
        .filter_map(|p| p.estimate.map(|e| (p.x as f64, e)))
        .collect();
    if pts.is_empty() {
        return Err(Error::NoData);
    }
    let x0 = pts.first().map(|p| p.0).unwrap_or(0.0);
    let mut x1 = pts.last().map(|p| p.0).unwrap_or(1.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let fitted: Vec<(f64, f64)> = fit
        .map(|b| {
            let steps = 200;
            (0..=steps)
                .map(|i| {
                    let x = x0 + (x1 - x0) * i as f64 / steps as f64;
                    (x, normal::cdf(latent(b, x)))
                })
                .collect()
        })
        .unwrap_or_default();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, e) in &pts {
        lo = lo.min(e.ci_low);
        hi = hi.max(e.ci_high);
    }
    for (_, p) in &fitted {
        lo = lo.min(*p);
        hi = hi.max(*p);
    }
    let pad = ((hi - lo) * 0.08).max(0.01);
    let frame = Frame {
        x0,
        x1,
        y0: (lo - pad).max(0.0),
        y1: (hi + pad).min(1.0),
    };

    let mut s = String::new();
    let w = &mut s;
    let fmt_err = |_| Error::Input("svg formatting failed".into());
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .map_err(fmt_err)?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).map_err(fmt_err)?;
    writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .map_err(fmt_err)?;

    // axes and ticks
    let (ax0, ax1, ay0, ay1) = (
        frame.px(x0),
        frame.px(x1),
        frame.py(frame.y0),
        frame.py(frame.y1),
    );
    writeln!(w, r##"<g stroke="#333" stroke-width="1">"##).map_err(fmt_err)?;
    writeln!(
        w,
        r#"<line x1="{ax0:.2}" y1="{ay0:.2}" x2="{ax1:.2}" y2="{ay0:.2}"/>"#
    )
    .map_err(fmt_err)?;
    writeln!(
        w,
        r#"<line x1="{ax0:.2}" y1="{ay0:.2}" x2="{ax0:.2}" y2="{ay1:.2}"/>"#
    )
    .map_err(fmt_err)?;
    writeln!(w, "</g>").map_err(fmt_err)?;

    let xs = tick_step(x1 - x0).max(1.0);
    let mut t = (x0 / xs).ceil() * xs;
    while t <= x1 + 1e-9 {
        let px = frame.px(t);
        writeln!(
            w,
            r##"<line x1="{px:.2}" y1="{ay0:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/>"##,
            ay0 + 5.0
        )
        .map_err(fmt_err)?;
        writeln!(
            w,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            ay0 + 18.0
        )
        .map_err(fmt_err)?;
        t += xs;
    }
    let ys = tick_step(frame.y1 - frame.y0);
    let mut t = (frame.y0 / ys).ceil() * ys;
    while t <= frame.y1 + 1e-12 {
        let py = frame.py(t);
        writeln!(
            w,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{ax0:.2}" y2="{py:.2}" stroke="#333"/>"##,
            ax0 - 5.0
        )
        .map_err(fmt_err)?;
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
            ax0 - 8.0,
            py + 4.0,
            t
        )
        .map_err(fmt_err)?;
        t += ys;
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">exposure</text>"#,
        (ax0 + ax1) / 2.0,
        HEIGHT - 14.0
    )
    .map_err(fmt_err)?;
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">listening probability</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0
    )
    .map_err(fmt_err)?;

    // confidence band
    let mut band = String::new();
    for (x, e) in &pts {
        write!(band, "{:.2},{:.2} ", frame.px(*x), frame.py(e.ci_high)).map_err(fmt_err)?;
    }
    for (x, e) in pts.iter().rev() {
        write!(band, "{:.2},{:.2} ", frame.px(*x), frame.py(e.ci_low)).map_err(fmt_err)?;
    }
    writeln!(
        w,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        band.trim_end()
    )
    .map_err(fmt_err)?;

    for (x, e) in &pts {
        writeln!(
            w,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4"/>"##,
            frame.px(*x),
            frame.py(e.p_hat)
        )
        .map_err(fmt_err)?;
    }

    if !fitted.is_empty() {
        let mut line = String::new();
        for (x, p) in &fitted {
            write!(line, "{:.2},{:.2} ", frame.px(*x), frame.py(*p)).map_err(fmt_err)?;
        }
        writeln!(
            w,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
            line.trim_end()
        )
        .map_err(fmt_err)?;
    }
    writeln!(w, "</svg>").map_err(fmt_err)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{CurvePoint, Estimate};

    fn curve() -> ExposureCurve {
        let pt = |x, p: f64| CurvePoint {
            x,
            n: 10,
            k: (p * 10.0) as u64,
            estimate: Some(Estimate {
                p_hat: p,
                ci_low: p - 0.1,
                ci_high: p + 0.1,
            }),
        };
        ExposureCurve {
            level: None,
            points: vec![
                pt(2, 0.6),
                pt(3, 0.7),
                CurvePoint {
                    x: 4,
                    n: 0,
                    k: 0,
                    estimate: None,
                },
                pt(5, 0.65),
            ],
        }
    }

    #[test]
    fn renders_points_band_and_overlay() {
        let svg = render_svg(&curve(), Some(&[0.3, 0.05, -0.005]), "a <b>").unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a &lt;b&gt;"));
        let plain = render_svg(&curve(), None, "t").unwrap();
        assert_eq!(plain.matches("<polyline").count(), 0);
    }

    #[test]
    fn empty_curve_is_an_error() {
        let c = ExposureCurve {
            level: None,
            points: vec![CurvePoint {
                x: 2,
                n: 0,
                k: 0,
                estimate: None,
            }],
        };
        assert!(render_svg(&c, None, "t").is_err());
    }

    #[test]
    fn tick_steps() {
        assert_eq!(tick_step(38.0), 5.0);
        assert_eq!(tick_step(0.2), 0.05);
    }
}
