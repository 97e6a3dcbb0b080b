use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume_io::write_atomic;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;
/// Plot area inside the canvas; the legend sits to its right.
pub const PLOT: [f64; 4] = [40.0, 20.0, 480.0, 440.0];
pub const MARGIN_FRACTION: f64 = 0.05;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Data-space window `[x0, x1, y0, y1]`: the bounding box grown by 5% of its
/// extent per side (a zero extent is widened to 1 first).
pub fn data_window(coords: &[[f64; 2]]) -> [f64; 4] {
    let mut w = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in coords {
        w[0] = w[0].min(p[0]);
        w[1] = w[1].max(p[0]);
        w[2] = w[2].min(p[1]);
        w[3] = w[3].max(p[1]);
    }
    for a in [0, 2] {
        if w[a + 1] - w[a] == 0.0 {
            w[a] -= 0.5;
            w[a + 1] += 0.5;
        }
        let pad = (w[a + 1] - w[a]) * MARGIN_FRACTION;
        w[a] -= pad;
        w[a + 1] += pad;
    }
    w
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Categorical scatter plot: one `<circle>` per point, colored by the index
/// of its label in sorted order, and a legend of square swatches.
pub fn render_scatter(coords: &[[f64; 2]], labels: &[String]) -> Result<String> {
    if coords.len() != labels.len() {
        return Err(Error::invalid(
            "scatter input",
            format!("{} points but {} labels", coords.len(), labels.len()),
        ));
    }
    if coords.is_empty() {
        return Err(Error::invalid("scatter input", "no points".to_string()));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scatter input", "non-finite coordinate".to_string()));
    }
    let mut distinct: Vec<&String> = labels.iter().collect();
    distinct.sort();
    distinct.dedup();
    let color = |l: &String| PALETTE[distinct.binary_search(&l).expect("label listed") % PALETTE.len()];

    let w = data_window(coords);
    let [px, py, pw, ph] = PLOT;
    let sx = |x: f64| px + (x - w[0]) / (w[1] - w[0]) * pw;
    let sy = |y: f64| py + ph - (y - w[2]) / (w[3] - w[2]) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-window="{} {} {} {}">"#,
        w[0], w[1], w[2], w[3]
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<rect x="{px}" y="{py}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for (p, l) in coords.iter().zip(labels) {
        writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            fmt(sx(p[0])),
            fmt(sy(p[1])),
            color(l)
        )
        .unwrap();
    }
    writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#).unwrap();
    for (i, l) in distinct.iter().enumerate() {
        let y = py + 10.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<rect class="legend" x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            px + pw + 20.0,
            y,
            color(l),
            px + pw + 36.0,
            y + 9.0,
            escape(l)
        )
        .unwrap();
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_scatter(coords: &[[f64; 2]], labels: &[String], path: &Path) -> Result<()> {
    write_atomic(path, render_scatter(coords, labels)?.as_bytes())
}
