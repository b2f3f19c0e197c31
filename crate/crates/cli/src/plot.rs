//! CMC curves as a standalone SVG.

use std::fmt::Write;
use std::path::Path;

use vld::{Result, VldError};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(usize, f64)>,
}

/// Reads a `rank,value` CSV as written by the evaluator.
pub fn parse_cmc(label: &str, text: &str) -> Result<Curve> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| VldError::Parse { line: i + 1, msg };
        if i == 0 {
            if line != "rank,value" {
                return Err(err(format!("expected header 'rank,value', got '{line}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (r, v) = line.split_once(',').ok_or_else(|| err(format!("expected 'rank,value', got '{line}'")))?;
        let rank: usize = r.trim().parse().map_err(|_| err(format!("bad rank '{r}'")))?;
        let value: f64 = v.trim().parse().map_err(|_| err(format!("bad value '{v}'")))?;
        if rank == 0 || !(0.0..=1.0).contains(&value) {
            return Err(err(format!("rank must be >= 1 and value in [0, 1], got {rank},{value}")));
        }
        points.push((rank, value));
    }
    if points.is_empty() {
        return Err(VldError::Parse { line: 1, msg: "no data rows".into() });
    }
    Ok(Curve { label: label.to_string(), points })
}

pub fn read_cmc(path: &Path) -> Result<Curve> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VldError::Data(format!("cannot read {}: {e}", path.display())))?;
    let label = path.file_stem().map_or("curve".into(), |s| s.to_string_lossy().into_owned());
    parse_cmc(&label, &text)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders curves on shared axes: rank on x, matching rate in [0, 1] on y.
pub fn render_svg(curves: &[Curve]) -> String {
    let max_rank = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).max().unwrap_or(1).max(2);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |r: usize| MARGIN + (r - 1) as f64 / (max_rank - 1) as f64 * plot_w;
    let y = |v: f64| MARGIN + (1.0 - v) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">1</text>"#,
        x(1),
        HEIGHT - MARGIN + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{max_rank}</text>"#,
        x(max_rank),
        HEIGHT - MARGIN + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">rank</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(r, v)| format!("{:.2},{:.2}", x(r), y(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN - 150.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text></g>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            ly,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
