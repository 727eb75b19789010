//! Minimal standalone SVG line charts with error bars.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

pub struct Point {
    pub x: f64,
    pub mean: f64,
    pub std_dev: f64,
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points with a NaN mean (no completed runs) are left out.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[Point]) -> String {
    let pts: Vec<&Point> = points.iter().filter(|p| p.mean.is_finite() && p.x.is_finite()).collect();
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (0.0_f64, f64::NEG_INFINITY);
    for p in &pts {
        let sd = if p.std_dev.is_finite() { p.std_dev } else { 0.0 };
        x_lo = x_lo.min(p.x);
        x_hi = x_hi.max(p.x);
        y_lo = y_lo.min(p.mean - sd);
        y_hi = y_hi.max(p.mean + sd);
    }
    if pts.is_empty() {
        (x_lo, x_hi, y_hi) = (0.0, 1.0, 1.0);
    }
    if x_hi <= x_lo {
        (x_lo, x_hi) = (x_lo - 1.0, x_hi + 1.0);
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bottom, right) = (MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w);
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN_LEFT},{MARGIN_TOP} V{bottom} H{right}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x_lo, x_hi, 5) {
        let x = sx(t);
        let _ = writeln!(svg, r#"<line x1="{x:.1}" y1="{bottom}" x2="{x:.1}" y2="{}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#, bottom + 20.0, label(t));
    }
    for t in ticks(y_lo, y_hi, 5) {
        let y = sy(t);
        let _ = writeln!(svg, r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{right}" y2="{y:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN_LEFT - 8.0, y + 4.0, label(t));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_LEFT + plot_w / 2.0, HEIGHT - 16.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    if !pts.is_empty() {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.mean))).collect();
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, path.join(" "));
    }
    for p in &pts {
        let (x, y) = (sx(p.x), sy(p.mean));
        if p.std_dev.is_finite() && p.std_dev > 0.0 {
            let (top, low) = (sy(p.mean + p.std_dev), sy(p.mean - p.std_dev));
            let _ = writeln!(
                svg,
                r##"<path d="M{x:.1},{top:.1} V{low:.1} M{:.1},{top:.1} H{:.1} M{:.1},{low:.1} H{:.1}" stroke="#1f5fa8"/>"##,
                x - 4.0,
                x + 4.0,
                x - 4.0,
                x + 4.0
            );
        }
        let _ = writeln!(svg, r##"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="#1f5fa8"/>"##);
    }
    svg.push_str("</svg>\n");
    svg
}
