//! Static SVG figures and a degradation summary built from evaluation
//! reports. Output bytes depend only on the report contents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{degradation_delta, EvalReport};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;
const KDE_POINTS: usize = 200;

/// Silverman's rule of thumb: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Gaussian kernel density estimate evaluated at `grid`.
pub fn kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            values
                .iter()
                .map(|v| {
                    let z = (x - v) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Grid and density for a smoothed regret distribution.
fn density(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut h = silverman_bandwidth(values);
    if !(h > 0.0) {
        h = ((hi - lo) / 50.0).max(1e-3);
    }
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let grid: Vec<f64> = (0..KDE_POINTS)
        .map(|i| a + (b - a) * i as f64 / (KDE_POINTS - 1) as f64)
        .collect();
    let dens = kde(values, h, &grid);
    (grid, dens)
}

struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
    markers: bool,
}

struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

impl Panel {
    fn render(&self, out: &mut String, ox: f64, oy: f64) {
        let (x0, x1) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y0, y1) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let pw = PANEL_W - MARGIN - 12.0;
        let ph = PANEL_H - MARGIN - 24.0;
        let (px, py) = (ox + MARGIN, oy + 24.0);
        let sx = |x: f64| px + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| py + ph - (y - y0) / (y1 - y0) * ph;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            px + pw / 2.0,
            oy + 14.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{px:.1}" y="{py:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + (x1 - x0) * f;
            let yv = y0 + (y1 - y0) * f;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
                sx(xv),
                py + ph + 12.0,
                fmt_num(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{}</text>"#,
                px - 3.0,
                sy(yv) + 3.0,
                fmt_num(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            px + pw / 2.0,
            py + ph + 26.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            ox + 10.0,
            py + ph / 2.0,
            ox + 10.0,
            py + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
            if s.markers {
                for p in &pts {
                    let (x, y) = p.split_once(',').expect("formatted pair");
                    let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{}"/>"#, s.color);
                }
            }
            let ly = py + 10.0 + 11.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/>"#,
                px + 6.0,
                px + 18.0,
                s.color
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9">{}</text>"#,
                px + 21.0,
                ly + 3.0,
                escape(&s.label)
            );
        }
    }
}

/// Lays panels out on a grid with `cols` columns.
fn svg(panels: &[Panel], cols: usize) -> String {
    let rows = panels.len().div_ceil(cols);
    let (w, h) = (PANEL_W * cols as f64, PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, PANEL_W * (i % cols) as f64, PANEL_H * (i / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn curve(values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect()
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn regret_vs_sigma(label: &str, report: &EvalReport) -> Panel {
    let series = report
        .algorithms()
        .iter()
        .enumerate()
        .map(|(i, name)| Series {
            label: name.to_string(),
            color: color(i),
            points: report
                .regret_curves(name)
                .iter()
                .map(|(s, c)| (*s, c.last().copied().unwrap_or(0.0)))
                .collect(),
            markers: true,
        })
        .collect();
    Panel {
        title: format!("{label}: final regret vs test variance"),
        x_label: "test variance".into(),
        y_label: "average regret".into(),
        series,
    }
}

fn sigma_panels(label: &str, report: &EvalReport) -> Vec<Panel> {
    let algos = report.algorithms();
    let mut panels = Vec::new();
    for &s in &report.manifest.sweep.sigma2 {
        let cells: Vec<_> = algos
            .iter()
            .enumerate()
            .filter_map(|(i, a)| report.cell(a, s).map(|c| (i, c)))
            .collect();
        let series = |f: &dyn Fn(&crate::eval::CellReport) -> Option<Vec<(f64, f64)>>| -> Vec<Series> {
            cells
                .iter()
                .filter_map(|(i, c)| {
                    f(c).map(|points| Series {
                        label: c.algorithm.clone(),
                        color: color(*i),
                        points,
                        markers: false,
                    })
                })
                .collect()
        };
        panels.push(Panel {
            title: format!("{label}, variance {s}: suboptimality"),
            x_label: "step".into(),
            y_label: "avg suboptimality".into(),
            series: series(&|c| Some(curve(&c.avg_suboptimality))),
        });
        panels.push(Panel {
            title: format!("{label}, variance {s}: regret"),
            x_label: "step".into(),
            y_label: "avg regret".into(),
            series: series(&|c| Some(curve(&c.avg_regret))),
        });
        panels.push(Panel {
            title: format!("{label}, variance {s}: regret density"),
            x_label: "total regret".into(),
            y_label: "density".into(),
            series: series(&|c| {
                (!c.totals.is_empty()).then(|| {
                    let (g, d) = density(&c.totals);
                    g.into_iter().zip(d).collect()
                })
            }),
        });
        panels.push(Panel {
            title: format!("{label}, variance {s}: prediction loss"),
            x_label: "step".into(),
            y_label: "online prediction loss".into(),
            series: series(&|c| c.prediction_loss.as_ref().map(|p| curve(p))),
        });
    }
    panels
}

/// Markdown table of final regret and its increase over the lowest test
/// variance, for every report, algorithm and variance.
pub fn summary_table(reports: &[(String, EvalReport)]) -> Result<String> {
    let mut out = String::from("| report | algorithm | test variance | final avg regret | delta vs lowest variance |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (label, report) in reports {
        let base = report
            .manifest
            .sweep
            .sigma2
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        for name in report.algorithms() {
            let curves = report.regret_curves(name);
            for (s, c) in &curves {
                let n = c.len();
                let delta = if n == 0 { 0.0 } else { degradation_delta(&curves, *s, base, n)? };
                let _ = writeln!(
                    out,
                    "| {label} | {name} | {s} | {:.4} | {:+.4} |",
                    c.last().copied().unwrap_or(0.0),
                    delta
                );
            }
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the regret-vs-variance figure (one panel per report), one
/// per-variance grid per report, and `summary.md`. Returns written paths.
pub fn render(reports: &[(String, EvalReport)], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to render".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let overview: Vec<Panel> = reports.iter().map(|(l, r)| regret_vs_sigma(l, r)).collect();
    let path = dir.join("regret_vs_variance.svg");
    write(&path, &svg(&overview, reports.len()))?;
    written.push(path);
    for (label, report) in reports {
        let path = dir.join(format!("{label}_curves.svg"));
        write(&path, &svg(&sigma_panels(label, report), 4))?;
        written.push(path);
    }
    let path = dir.join("summary.md");
    write(&path, &summary_table(reports)?)?;
    written.push(path);
    Ok(written)
}
