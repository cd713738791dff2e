use std::fmt::Write as _;
use std::path::Path;

use crate::embed::Embedding;
use crate::error::{Error, Result};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const PLOT: f64 = 600.0;
const MARGIN: f64 = 20.0;
const LEGEND: f64 = 120.0;
const RADIUS: f64 = 2.5;

/// Scatter plot of the first two embedding coordinates, one colour per label.
pub fn render_scatter_svg(z: &Embedding, labels: Option<&[usize]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != z.len() {
            return Err(Error::DimensionMismatch(format!("{} labels for {} points", l.len(), z.len())));
        }
    }
    let coord = |i: usize, k: usize| if k < z.dim() { z.z[(i, k)] } else { 0.0 };
    let extent = |k: usize| {
        (0..z.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            (lo.min(coord(i, k)), hi.max(coord(i, k)))
        })
    };
    let ((x0, x1), (y0, y1)) = (extent(0), extent(1));
    let span = (x1 - x0).max(y1 - y0);
    let inner = PLOT - 2.0 * MARGIN;
    let map = |v: f64, lo: f64, hi: f64| {
        if span > 0.0 {
            MARGIN + inner * (v - lo) / span + 0.5 * inner * (1.0 - (hi - lo) / span)
        } else {
            PLOT / 2.0
        }
    };

    let mut s = String::new();
    let width = PLOT + LEGEND;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PLOT}" viewBox="0 0 {width} {PLOT}">"#
    )
    .unwrap();
    writeln!(s, r##"<rect x="0" y="0" width="{PLOT}" height="{PLOT}" fill="#ffffff" stroke="#cccccc"/>"##).unwrap();
    for i in 0..z.len() {
        let label = labels.map_or(0, |l| l[i]);
        let cx = map(coord(i, 0), x0, x1);
        let cy = PLOT - map(coord(i, 1), y0, y1);
        writeln!(
            s,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{RADIUS}" fill="{}" fill-opacity="0.8"/>"#,
            PALETTE[label % PALETTE.len()]
        )
        .unwrap();
    }
    let mut classes: Vec<usize> = labels.map(<[usize]>::to_vec).unwrap_or_default();
    classes.sort_unstable();
    classes.dedup();
    for (row, c) in classes.iter().enumerate() {
        let y = MARGIN + 18.0 * row as f64;
        writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{y:.3}" r="5" fill="{}"/><text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="12">{c}</text>"#,
            PLOT + 20.0,
            PALETTE[c % PALETTE.len()],
            PLOT + 32.0,
            y + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_scatter_svg(z: &Embedding, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    std::fs::write(path, render_scatter_svg(z, labels)?)?;
    Ok(())
}
