//! SVG line plots of run and sweep CSV files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed CSV with a header row; non-numeric cells read as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{name}: empty CSV")))?
            .split(',')
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line.split(',').map(|c| c.trim().parse().unwrap_or(f64::NAN)).collect();
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("{name}: expected {} columns, got {}", header.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(Self { name: name.to_string(), header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub metric: String,
    pub log_y: bool,
    /// Drawn as a horizontal line.
    pub reference: Option<f64>,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self { metric: "rayleigh".into(), log_y: false, reference: None, width: 720.0, height: 440.0 }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MARGIN: f64 = 60.0;

struct Series {
    label: String,
    x: Vec<f64>,
    y: Vec<f64>,
    band: Option<(Vec<f64>, Vec<f64>)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `metric` against `step` for each table. Sweep summaries
/// (`<metric>_mean`, `<metric>_var`) get a one-standard-deviation band.
pub fn render_svg(tables: &[Table], opts: &PlotOptions) -> Result<String> {
    let mut series = Vec::new();
    for t in tables {
        let x = t.column("step").ok_or_else(|| Error::Config(format!("{}: no `step` column", t.name)))?;
        if let Some(y) = t.column(&opts.metric) {
            series.push(Series { label: t.name.clone(), x, y, band: None });
        } else if let (Some(mean), Some(var)) =
            (t.column(&format!("{}_mean", opts.metric)), t.column(&format!("{}_var", opts.metric)))
        {
            let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
            let lo = mean.iter().zip(&sd).map(|(m, s)| m - s).collect();
            let hi = mean.iter().zip(&sd).map(|(m, s)| m + s).collect();
            series.push(Series { label: t.name.clone(), x, y: mean, band: Some((lo, hi)) });
        } else {
            return Err(Error::Config(format!("{}: no column `{}`", t.name, opts.metric)));
        }
    }
    let ty = |v: f64| if opts.log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };

    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    let grow = |r: &mut (f64, f64), v: f64| {
        if v.is_finite() {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    };
    for s in &series {
        s.x.iter().for_each(|&v| grow(&mut xs, v));
        s.y.iter().for_each(|&v| grow(&mut ys, ty(v)));
        if let Some((lo, hi)) = &s.band {
            lo.iter().chain(hi).for_each(|&v| grow(&mut ys, ty(v)));
        }
    }
    if let Some(r) = opts.reference {
        grow(&mut ys, ty(r));
    }
    if !(xs.0.is_finite() && ys.0.is_finite()) {
        return Err(Error::Config(format!("nothing to plot for `{}`", opts.metric)));
    }
    for r in [&mut xs, &mut ys] {
        if r.1 - r.0 < 1e-12 * (1.0 + r.0.abs()) {
            r.0 -= 0.5;
            r.1 += 0.5;
        }
    }
    let (w, h) = (opts.width, opts.height);
    let px = |v: f64| MARGIN + (v - xs.0) / (xs.1 - xs.0) * (w - 2.0 * MARGIN);
    let py = |v: f64| h - MARGIN - (v - ys.0) / (ys.1 - ys.0) * (h - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, w - MARGIN, MARGIN, h - MARGIN);
    let _ = writeln!(svg, r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (vx, vy) = (xs.0 + f * (xs.1 - xs.0), ys.0 + f * (ys.1 - ys.0));
        let label = if opts.log_y { format!("1e{vy:.1}") } else { format!("{vy:.4}") };
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{vx:.0}</text>"#, px(vx), y1 + 18.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, x0 - 4.0, py(vy) + 4.0);
    }
    let ylabel = if opts.log_y { format!("log10 {}", opts.metric) } else { opts.metric.clone() };
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="{x0}" y="{:.1}">{}</text>"#, y0 - 20.0, escape(&ylabel));

    let points = |x: &[f64], y: &[f64]| -> Vec<String> {
        x.iter()
            .zip(y)
            .filter(|(a, b)| a.is_finite() && ty(**b).is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(ty(*b))))
            .collect()
    };
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some((lo, hi)) = &s.band {
            let mut pts = points(&s.x, hi);
            let mut back = points(&s.x, lo);
            back.reverse();
            pts.extend(back);
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points(&s.x, &s.y).join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            x0 + 10.0,
            y0 + 16.0 * (i as f64 + 1.0),
            escape(&s.label)
        );
    }
    if let Some(r) = opts.reference.map(ty).filter(|v| v.is_finite()) {
        let _ = writeln!(
            svg,
            r#"<line class="reference" x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
            y = py(r)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
