//! Static SVG charts of run, bound and batch outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch::BatchResult;
use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::forecasters::RoundRecord;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// Cumulative loss against t, one curve per run CSV.
    Cumloss,
    /// Cumulative loss minus that of the best constant prediction on the prefix.
    Regret,
    /// The clipping threshold B_t against t.
    Staircase,
    /// Left- and right-hand sides per bound report.
    Margins,
    /// Measured risk and bound against T, one point per batch result.
    Risk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart; `step` draws each series as a right-continuous staircase.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], step: bool) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::arg("nothing to plot"));
    }
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(std::iter::once(0.0)));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r##"<g stroke="#444" fill="none"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></g>"##);
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let (px, py) = (sx(fx), sy(fy));
        let _ = writeln!(out, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/>"##, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(fx));
        let _ = writeln!(out, r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#444"/>"##, LEFT - 5.0);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, tick_label(fy));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            match prev {
                None => {
                    let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                }
                Some((_, py)) if step => {
                    let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(x), sy(py), sx(x), sy(y));
                }
                Some(_) => {
                    let _ = write!(d, " L{:.2},{:.2}", sx(x), sy(y));
                }
            }
            prev = Some((x, y));
        }
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(out, r#"<path d="{d}" stroke="{color}" stroke-width="1.6" fill="none"/>"#);
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grouped bars of (lhs, rhs) per labelled report.
pub fn margin_chart(title: &str, bars: &[(String, f64, f64, bool)]) -> Result<String> {
    if bars.is_empty() {
        return Err(Error::arg("nothing to plot"));
    }
    let (_, top) = range(bars.iter().flat_map(|b| [b.1, b.2]).chain(std::iter::once(0.0)));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sy = |y: f64| TOP + ph - y / top * ph;
    let slot = pw / bars.len() as f64;
    let bw = slot * 0.35;
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444"/>"##, TOP + ph, LEFT + pw, TOP + ph);
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, sy(v) + 4.0, tick_label(v));
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/>"##, sy(v), LEFT + pw, sy(v));
    }
    for (k, (label, lhs, rhs, pass)) in bars.iter().enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.15;
        for (j, (v, color)) in [(*lhs, PALETTE[0]), (*rhs, PALETTE[2])].into_iter().enumerate() {
            let y = sy(v.max(0.0));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{bw:.2}" height="{:.2}" fill="{color}"/>"#,
                x + j as f64 * bw,
                TOP + ph - y
            );
        }
        let mark = if *pass { "" } else { " ✗" };
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}{mark}</text>"#, x + bw, TOP + ph + 18.0, escape(label));
    }
    let lx = LEFT + pw + 12.0;
    for (j, (name, color)) in [("measured", PALETTE[0]), ("bound", PALETTE[2])].into_iter().enumerate() {
        let ly = TOP + 14.0 + 18.0 * j as f64;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="14" height="10" fill="{color}"/>"#, ly - 6.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{name}</text>"#, lx + 20.0, ly + 4.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Reads a run CSV (as written by the `run` command).
pub fn read_run_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RoundRecord>() {
        rows.push(rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?);
    }
    if rows.is_empty() {
        return Err(Error::arg(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::arg(format!("{} is empty", path.display())));
    }
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn stem(p: &Path) -> String {
    p.parent()
        .and_then(|d| d.file_name())
        .map(|d| format!("{}/", d.to_string_lossy()))
        .unwrap_or_default()
        + &p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Cumulative loss minus Σ_{s≤t}(y_s − ȳ_t)², the loss of the best constant on each prefix.
pub fn regret_to_best_constant(rows: &[RoundRecord]) -> Vec<(f64, f64)> {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            sum += r.y;
            sum_sq += r.y * r.y;
            let n = (k + 1) as f64;
            let best = (sum_sq - sum * sum / n).max(0.0);
            (r.t as f64, r.cumloss - best)
        })
        .collect()
}

pub fn render(kind: PlotKind, inputs: &[PathBuf]) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::arg("plot needs at least one --input"));
    }
    match kind {
        PlotKind::Cumloss | PlotKind::Regret | PlotKind::Staircase => {
            let mut series = Vec::new();
            for p in inputs {
                let rows = read_run_csv(p)?;
                let points = match kind {
                    PlotKind::Cumloss => rows.iter().map(|r| (r.t as f64, r.cumloss)).collect(),
                    PlotKind::Regret => regret_to_best_constant(&rows),
                    _ => rows.iter().map(|r| (r.t as f64, r.b_t)).collect(),
                };
                series.push(Series { label: stem(p), points });
            }
            let (title, y) = match kind {
                PlotKind::Cumloss => ("Cumulative square loss", "cumulative loss"),
                PlotKind::Regret => ("Regret against the best constant", "regret"),
                _ => ("Clipping threshold", "B_t"),
            };
            line_chart(title, "t", y, &series, kind == PlotKind::Staircase)
        }
        PlotKind::Margins => {
            let mut bars = Vec::new();
            for p in inputs {
                let reports: Vec<BoundReport> = read_json(p)?;
                for r in reports {
                    bars.push((r.bound.to_string(), r.lhs, r.rhs, r.pass));
                }
            }
            margin_chart("Bound margins", &bars)
        }
        PlotKind::Risk => {
            let mut results = Vec::new();
            for p in inputs {
                let r: BatchResult = read_json(p)?;
                results.push(r);
            }
            results.sort_by_key(|r| r.t);
            let measured = Series {
                label: "measured risk".into(),
                points: results.iter().map(|r| (r.t as f64, r.measured_risk)).collect(),
            };
            let rhs = Series {
                label: "bound".into(),
                points: results.iter().map(|r| (r.t as f64, r.rhs)).collect(),
            };
            line_chart("Risk against sample size", "T", "risk", &[measured, rhs], false)
        }
    }
}
