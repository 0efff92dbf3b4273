//! SVG line chart of median curves with interquartile bands.

use std::fmt::Write as _;

use super::io::{summarize, ResultRow, SummaryRow};
use crate::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders one median line and band per method from summary rows.
pub fn render_svg(summary: &[SummaryRow], metric: &str) -> Result<String> {
    let finite: Vec<&SummaryRow> = summary.iter().filter(|r| r.median.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Empty("no finite values to plot"));
    }
    let mut methods: Vec<&str> = summary.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();

    let t_min = finite.iter().map(|r| r.t).min().unwrap() as f64;
    let t_max = finite.iter().map(|r| r.t).max().unwrap() as f64;
    let vals = finite
        .iter()
        .flat_map(|r| [r.median, r.q25, r.q75])
        .filter(|v| v.is_finite());
    let (mut y_min, mut y_max) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    y_min = y_min.min(0.0);
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let (t_lo, t_hi) = if t_max > t_min { (t_min, t_max) } else { (t_min - 0.5, t_min + 0.5) };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + (t - t_lo) / (t_hi - t_lo) * plot_w;
    let sy = |v: f64| TOP + (1.0 - (v.clamp(y_min, y_max) - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M {x0:.2} {y0:.2} L {x0:.2} {y1:.2} L {x1:.2} {y1:.2}" stroke="black" fill="none"/>"#
    );
    for v in nice_ticks(y_min, y_max, 5) {
        let y = sy(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            label(v)
        );
    }
    for v in nice_ticks(t_lo, t_hi, 5) {
        let x = sx(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            y1 + 4.0,
            y1 + 18.0,
            label(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">t</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{metric}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (k, method) in methods.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut rows: Vec<&SummaryRow> = finite.iter().copied().filter(|r| r.method == *method).collect();
        rows.sort_by_key(|r| r.t);
        if rows.is_empty() {
            continue;
        }
        let band: Vec<&SummaryRow> = rows.iter().copied().filter(|r| r.q25.is_finite() && r.q75.is_finite()).collect();
        if band.len() > 1 {
            let mut pts: Vec<String> = band.iter().map(|r| format!("{:.2},{:.2}", sx(r.t as f64), sy(r.q75))).collect();
            pts.extend(band.iter().rev().map(|r| format!("{:.2},{:.2}", sx(r.t as f64), sy(r.q25))));
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.t as f64), sy(r.median))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}" font-size="11">{method}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Chart of the median over seeds of `metric` (the first metric present when
/// none is given).
pub fn plot_results(rows: &[ResultRow], metric: Option<&str>) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("results table"));
    }
    let metric = match metric {
        Some(m) => m.to_string(),
        None => {
            let mut names: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
            names.sort_unstable();
            names[0].to_string()
        }
    };
    let summary = summarize(rows, &metric);
    if summary.is_empty() {
        return Err(Error::invalid(format!("no rows for metric {metric:?}")));
    }
    render_svg(&summary, &metric)
}
