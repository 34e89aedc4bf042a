//! Minimal standalone SVG charts for curves and landscapes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;

fn extent(v: impl Iterator<Item = f64>) -> Result<[f64; 2]> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v {
        if !x.is_finite() {
            return Err(Error::InvalidInput("cannot plot non-finite values".into()));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo > hi {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    if hi - lo < 1e-12 {
        return Ok([lo - 0.5, hi + 0.5]);
    }
    Ok([lo, hi])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, xr: [f64; 2], yr: [f64; 2]) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>
"#,
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
        W - 2.0 * PAD,
        H - 2.0 * PAD,
    );
    for (v, x) in [(xr[0], PAD), (xr[1], W - PAD)] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            H - PAD + 16.0,
            fmt_tick(v)
        );
    }
    for (v, y) in [(yr[0], H - PAD), (yr[1], PAD)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            PAD - 4.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Polyline of `(x, y)` pairs.
pub fn line_chart_svg(
    points: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> Result<String> {
    let xr = extent(points.iter().map(|p| p.0))?;
    let yr = extent(points.iter().map(|p| p.1))?;
    let sx = |x: f64| PAD + (x - xr[0]) / (xr[1] - xr[0]) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - yr[0]) / (yr[1] - yr[0]) * (H - 2.0 * PAD);
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, xr, yr);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        path.join(" ")
    );
    out.push_str("</svg>\n");
    Ok(out)
}

fn ramp(t: f64) -> (u8, u8, u8) {
    // dark blue → yellow
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(20.0, 250.0), lerp(30.0, 230.0), lerp(110.0, 40.0))
}

/// Heatmap with `rows[r][c]`; rows run bottom to top, columns left to right.
pub fn heatmap_svg(
    rows: &[Vec<f64>],
    x_range: [f64; 2],
    y_range: [f64; 2],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> Result<String> {
    let ncol = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncol == 0 || rows.iter().any(|r| r.len() != ncol) {
        return Err(Error::InvalidInput(
            "heatmap needs a non-empty rectangular matrix".into(),
        ));
    }
    let vr = extent(rows.iter().flatten().copied())?;
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, x_range, y_range);
    let cw = (W - 2.0 * PAD) / ncol as f64;
    let ch = (H - 2.0 * PAD) / rows.len() as f64;
    for (r, row) in rows.iter().enumerate() {
        let y = H - PAD - (r + 1) as f64 * ch;
        for (c, &v) in row.iter().enumerate() {
            let (red, green, blue) = ramp((v - vr[0]) / (vr[1] - vr[0]));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({red},{green},{blue})"/>"#,
                PAD + c as f64 * cw,
                y,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(svg: &str, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, svg)?;
    Ok(())
}
