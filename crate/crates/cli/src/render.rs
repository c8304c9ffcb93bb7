//! SVG drawing of an instance, its tour, and per-candidate impact colors.
//!
//! Colors interpolate linearly in RGB from `LOW` (smallest value) to `HIGH`
//! (largest value); when every value is equal all candidates get `HIGH`.

use std::fmt::Write;
use tspsense::solver::tour_edges;
use tspsense::{Instance, Task};

pub const LOW: [u8; 3] = [255, 237, 160];
pub const HIGH: [u8; 3] = [189, 0, 38];
const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;
const LEGEND: f64 = 60.0;

pub struct Coloring<'a> {
    pub task: Task,
    /// Nodes for removal (one per node), tour edges in tour order for forbid.
    pub values: &'a [f64],
    pub label: String,
}

pub fn color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    [mix(LOW[0], HIGH[0]), mix(LOW[1], HIGH[1]), mix(LOW[2], HIGH[2])]
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn normalize(values: &[f64]) -> (f64, f64, impl Fn(f64) -> f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    (lo, hi, move |v: f64| if span > 0.0 { (v - lo) / span } else { 1.0 })
}

pub fn render_svg(inst: &Instance, tour: &[usize], coloring: Option<&Coloring<'_>>) -> String {
    let px = |p: [f64; 2]| (MARGIN + p[0] * (SIZE - 2.0 * MARGIN), SIZE - MARGIN - p[1] * (SIZE - 2.0 * MARGIN));
    let height = SIZE + if coloring.is_some() { LEGEND } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(inst.id()));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let edge_values = coloring.filter(|c| c.task == Task::Forbid);
    let node_values = coloring.filter(|c| c.task == Task::Removal);
    let norm = coloring.map(|c| normalize(c.values));

    for (t, (u, v)) in tour_edges(tour).into_iter().enumerate() {
        let (x1, y1) = px(inst.coords()[u]);
        let (x2, y2) = px(inst.coords()[v]);
        let (stroke, width, data) = match (edge_values, &norm) {
            (Some(c), Some((_, _, f))) => (hex(color(f(c.values[t]))), 4.0, format!(r#" data-value="{}""#, c.values[t])),
            _ => ("#555555".to_string(), 2.0, String::new()),
        };
        let _ = writeln!(
            s,
            r#"<line class="edge" data-edge="{u}-{v}"{data} x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }
    for (i, &p) in inst.coords().iter().enumerate() {
        let (x, y) = px(p);
        let (fill, data) = match (node_values, &norm) {
            (Some(c), Some((_, _, f))) => (hex(color(f(c.values[i]))), format!(r#" data-value="{}""#, c.values[i])),
            _ => ("#ffffff".to_string(), String::new()),
        };
        let _ = writeln!(
            s,
            r##"<circle class="node" data-node="{i}"{data} cx="{x:.2}" cy="{y:.2}" r="7" fill="{fill}" stroke="#222222" stroke-width="1.5"/>"##
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" font-family="sans-serif">{i}</text>"#, x + 9.0, y - 9.0);
    }

    if let (Some(c), Some((lo, hi, _))) = (coloring, &norm) {
        let y = SIZE + 10.0;
        let _ = writeln!(s, r#"<defs><linearGradient id="scale"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#, hex(LOW), hex(HIGH));
        let _ = writeln!(s, r#"<rect class="legend" x="{MARGIN}" y="{y}" width="{}" height="14" fill="url(#scale)"/>"#, SIZE - 2.0 * MARGIN);
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12" font-family="sans-serif">{lo:.4}</text>"#, y + 30.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif" text-anchor="end">{hi:.4}</text>"#,
            SIZE - MARGIN,
            y + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif" text-anchor="middle">{}</text>"#,
            SIZE / 2.0,
            y + 30.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_endpoints_and_monotone_luminance() {
        assert_eq!(color(0.0), LOW);
        assert_eq!(color(1.0), HIGH);
        let lum = |c: [u8; 3]| 0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64;
        let steps: Vec<f64> = (0..=20).map(|k| lum(color(k as f64 / 20.0))).collect();
        assert!(steps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn uncolored_drawing_has_tour_and_nodes() {
        let inst = tspsense::make_instance(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "sq").unwrap();
        let svg = render_svg(&inst, &[0, 1, 2, 3], None);
        assert_eq!(svg.matches("class=\"edge\"").count(), 4);
        assert_eq!(svg.matches("class=\"node\"").count(), 4);
        assert!(!svg.contains("data-value") && !svg.contains("legend"));
    }
}
