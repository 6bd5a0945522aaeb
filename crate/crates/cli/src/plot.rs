use std::fmt::Write as _;

use synapse_core::evolve::FitnessTrace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Relative improvement over the initial best, per generation, as an SVG
/// line chart (best and mean curves).
pub fn fitness_svg(trace: &FitnessTrace) -> String {
    let base = trace.generations.first().map_or(0.0, |g| g.best);
    let rel = |x: f64| if base > 0.0 { (x - base) / base * 100.0 } else { 0.0 };
    let best: Vec<f64> = trace.generations.iter().map(|g| rel(g.best)).collect();
    let mean: Vec<f64> = trace.generations.iter().map(|g| rel(g.mean)).collect();
    let lo = best.iter().chain(&mean).copied().fold(0.0, f64::min);
    let hi = best.iter().chain(&mean).copied().fold(1.0, f64::max);
    let last = (trace.generations.len().max(2) - 1) as f64;
    let px = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / last;
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let points = |ys: &[f64]| ys.iter().enumerate().map(|(i, y)| format!("{:.1},{:.1}", px(i), py(*y))).collect::<Vec<_>>().join(" ");

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">Relative fitness improvement across generations</text>"#, WIDTH / 2.0);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for (i, g) in trace.generations.iter().enumerate() {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(i), y0 + 18.0, g.gen);
    }
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}%</text>"#, x0 - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">generation</text>"#, WIDTH / 2.0, HEIGHT - 14.0);
    let _ = writeln!(svg, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##, points(&best));
    let _ = writeln!(svg, r##"<polyline fill="none" stroke="#ff7f0e" stroke-width="2" stroke-dasharray="5,4" points="{}"/>"##, points(&mean));
    let _ = writeln!(svg, r##"<text x="{}" y="{}" fill="#1f77b4">best</text>"##, x1 - 60.0, y1 + 4.0);
    let _ = writeln!(svg, r##"<text x="{}" y="{}" fill="#ff7f0e">mean</text>"##, x1 - 60.0, y1 + 20.0);
    svg.push_str("</svg>\n");
    svg
}
