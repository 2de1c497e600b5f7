use std::fmt::Write;

use super::{NomogramAxis, NomogramSpec};
use crate::stats::logit;

pub const WIDTH: f64 = 820.0;
/// x of 0 points on every axis.
pub const AXIS_LEFT: f64 = 200.0;
/// Width of the 0-100 points ruler.
pub const AXIS_WIDTH: f64 = 600.0;
const ROW: f64 = 50.0;
const TOP: f64 = 40.0;

const PROBABILITY_TICKS: [f64; 19] = [
    0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99,
    0.995, 0.999,
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round-number ticks covering `[lo, hi]`, about `target` of them, and the
/// number of decimals their labels need.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let (step, extra) = [(1.0, 0), (2.0, 0), (2.5, 1), (5.0, 0), (10.0, 0)]
        .into_iter()
        .map(|(m, e)| (m * mag, e))
        .find(|(s, _)| *s >= raw)
        .unwrap_or((10.0 * mag, 0));
    let decimals = ((-step.log10().floor()).max(0.0) as usize + extra).min(10);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    let ticks = (first..=last)
        .map(|k| {
            let v = k as f64 * step;
            let scale = 10f64.powi(decimals as i32);
            let v = (v * scale).round() / scale;
            if v == 0.0 {
                0.0
            } else {
                v
            }
        })
        .collect();
    (ticks, decimals)
}

fn px(points_per_px: f64, p: f64) -> f64 {
    AXIS_LEFT + p / points_per_px
}

fn tick(out: &mut String, x: f64, y: f64, value: f64, label: &str) {
    let _ = writeln!(
        out,
        "    <g class=\"tick\" data-value=\"{value}\"><line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/><text x=\"{x:.2}\" y=\"{:.2}\">{}</text></g>",
        y + 6.0,
        y + 18.0,
        escape(label)
    );
}

fn axis_line(out: &mut String, x1: f64, x2: f64, y: f64) {
    let _ = writeln!(
        out,
        "    <line class=\"axis-line\" x1=\"{x1:.2}\" y1=\"{y:.2}\" x2=\"{x2:.2}\" y2=\"{y:.2}\"/>"
    );
}

fn label(out: &mut String, y: f64, text: &str) {
    let _ = writeln!(
        out,
        "    <text class=\"axis-label\" x=\"10.00\" y=\"{:.2}\">{}</text>",
        y + 4.0,
        escape(text)
    );
}

fn feature_axis(out: &mut String, a: &NomogramAxis, y: f64) {
    let _ = writeln!(
        out,
        "  <g class=\"feature-axis\" data-feature=\"{}\" data-max-points=\"{}\">",
        escape(&a.name),
        a.max_points
    );
    let title = if a.unit.is_empty() {
        a.name.clone()
    } else {
        format!("{} ({})", a.name, a.unit)
    };
    label(out, y, &title);
    let x_lo = AXIS_LEFT + a.points(a.lo) * AXIS_WIDTH / 100.0;
    let x_hi = AXIS_LEFT + a.points(a.hi) * AXIS_WIDTH / 100.0;
    axis_line(out, x_lo.min(x_hi), x_lo.max(x_hi), y);
    let (ticks, decimals) = nice_ticks(a.lo, a.hi, 6);
    for v in ticks {
        let x = AXIS_LEFT + a.points(v) * AXIS_WIDTH / 100.0;
        tick(out, x, y, v, &format!("{v:.decimals$}"));
    }
    out.push_str("  </g>\n");
}

/// SVG 1.1 nomogram: a 0-100 points ruler, one axis per feature, the total
/// points axis and the probability axis. Every tick carries its value in a
/// `data-value` attribute; output is byte-stable for a given spec.
pub fn render_svg(spec: &NomogramSpec) -> String {
    let rows = spec.axes.len() + 3;
    let height = TOP + ROW * rows as f64 + 20.0;
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(
        out,
        "  <style>line {{ stroke: #222; stroke-width: 1 }} .tick text {{ text-anchor: middle }}</style>"
    );
    let _ = writeln!(
        out,
        "  <text class=\"title\" x=\"10.00\" y=\"20.00\" font-size=\"14\">{}-day mortality nomogram</text>",
        spec.horizon_days
    );

    let mut y = TOP + 10.0;
    let _ = writeln!(out, "  <g class=\"scale-axis\" data-axis=\"points\">");
    label(&mut out, y, "Points");
    axis_line(&mut out, AXIS_LEFT, AXIS_LEFT + AXIS_WIDTH, y);
    for k in 0..=10 {
        let p = 10.0 * k as f64;
        tick(&mut out, px(100.0 / AXIS_WIDTH, p), y, p, &format!("{p:.0}"));
    }
    out.push_str("  </g>\n");

    for a in &spec.axes {
        y += ROW;
        feature_axis(&mut out, a, y);
    }

    y += ROW;
    let total_max = spec.total_points_max;
    let per_px = if total_max > 0.0 { total_max / AXIS_WIDTH } else { 1.0 };
    let _ = writeln!(
        out,
        "  <g class=\"scale-axis\" data-axis=\"total-points\" data-max=\"{total_max}\">"
    );
    label(&mut out, y, "Total points");
    axis_line(&mut out, AXIS_LEFT, AXIS_LEFT + AXIS_WIDTH, y);
    if total_max > 0.0 {
        let (ticks, decimals) = nice_ticks(0.0, total_max, 10);
        for t in ticks {
            tick(&mut out, px(per_px, t), y, t, &format!("{t:.decimals$}"));
        }
    }
    out.push_str("  </g>\n");

    y += ROW;
    let _ = writeln!(out, "  <g class=\"scale-axis\" data-axis=\"probability\">");
    label(&mut out, y, &format!("{}-day risk", spec.horizon_days));
    axis_line(&mut out, AXIS_LEFT, AXIS_LEFT + AXIS_WIDTH, y);
    if spec.logit_per_point > 0.0 {
        for p in PROBABILITY_TICKS {
            let t = (logit(p) - spec.logit_offset) / spec.logit_per_point;
            if (0.0..=total_max).contains(&t) {
                tick(&mut out, px(per_px, t), y, p, &format!("{p}"));
            }
        }
    }
    out.push_str("  </g>\n");
    out.push_str("</svg>\n");
    out
}
