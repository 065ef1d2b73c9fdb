use std::fmt::Write as _;

use crate::cache_sim::HitRateCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Hit rate against relative cache size, one polyline per policy.
pub fn render_svg(curve: &HitRateCurve) -> String {
    let xmax = curve.points.iter().map(|p| p.relative_size).fold(0.0, f64::max).max(1e-9);
    let px = |x: f64| MARGIN + x / xmax * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - y * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (px(0.0), py(0.0), px(xmax), py(1.0));
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, py(v) + 4.0);
        let xv = v * xmax;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xv:.2}</text>"#, px(xv), y0 + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">relative cache size</text>"#, WIDTH / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">hit rate</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);
    for (k, name) in curve.policies().iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .filter(|p| &p.policy == name)
            .map(|p| format!("{:.2},{:.2}", px(p.relative_size), py(p.hit_rate)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, x0 + 10.0);
    }
    s.push_str("</svg>\n");
    s
}
