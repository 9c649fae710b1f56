//! Horizontal force plots as standalone SVG plus the numbers behind them.
//!
//! Risk-increasing contributions form one band ending at the model output
//! and pushing right; risk-decreasing contributions form the opposing band
//! starting at the output. The largest contributions sit next to the output
//! marker. Band widths are proportional to `|phi|`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{OutputSpace, ShapExplanation};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 200.0;
const MARGIN: f64 = 40.0;
const BAND_Y: f64 = 80.0;
const BAND_H: f64 = 28.0;
const RED: &str = "#e8384f";
const BLUE: &str = "#1e88e5";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub phi: f64,
    pub display_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub feature: String,
    pub label: String,
    pub side: Side,
    pub phi: f64,
    /// Band extent in output units.
    pub start: f64,
    pub end: f64,
    /// Band extent in pixels.
    pub x0: f64,
    pub x1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePayload {
    pub base_value: f64,
    pub model_output: f64,
    pub space: OutputSpace,
    pub contributions: Vec<Contribution>,
    pub segments: Vec<Segment>,
    pub domain: [f64; 2],
    pub px_per_unit: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcePlot {
    pub svg: String,
    pub payload: ForcePayload,
}

/// Compact label value: integers without decimals, otherwise two places.
pub fn format_display(v: f64) -> String {
    if v.is_finite() && v == libm::round(v) && v.abs() < 1e15 {
        alloc::format!("{}", v as i64)
    } else {
        alloc::format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Lays out and renders `e`. `labels` overrides the feature names when given.
pub fn render_force_plot(e: &ShapExplanation, labels: Option<&[String]>) -> ForcePlot {
    let names: Vec<String> = (0..e.contributions.len())
        .map(|i| labels.and_then(|l| l.get(i)).or_else(|| e.feature_names.get(i)).cloned().unwrap_or_else(|| alloc::format!("x{i}")))
        .collect();
    let contributions: Vec<Contribution> = e
        .contributions
        .iter()
        .enumerate()
        .map(|(i, &phi)| Contribution { feature: names[i].clone(), phi, display_value: e.display_values.get(i).copied().unwrap_or(f64::NAN) })
        .collect();

    let f = e.model_output;
    let pos: f64 = e.contributions.iter().filter(|p| **p > 0.0).sum();
    let neg: f64 = -e.contributions.iter().filter(|p| **p < 0.0).sum::<f64>();
    let (lo, hi) = if pos + neg > 0.0 {
        let pad = 0.05 * (pos + neg);
        ((f - pos).min(e.base_value) - pad, (f + neg).max(e.base_value) + pad)
    } else {
        (e.base_value - 1.0, e.base_value + 1.0)
    };
    let scale = (WIDTH - 2.0 * MARGIN) / (hi - lo);
    let px = |v: f64| MARGIN + (v - lo) * scale;

    // Largest magnitude first, ties by feature order.
    let mut order: Vec<usize> = (0..e.contributions.len()).filter(|&i| e.contributions[i] != 0.0).collect();
    order.sort_by(|&a, &b| e.contributions[b].abs().total_cmp(&e.contributions[a].abs()).then(a.cmp(&b)));
    let mut segments = Vec::new();
    let (mut up_edge, mut down_edge) = (f, f);
    for i in order {
        let phi = e.contributions[i];
        let (side, start, end) = if phi > 0.0 {
            let s = (up_edge - phi, up_edge);
            up_edge -= phi;
            (Side::Increase, s.0, s.1)
        } else {
            let s = (down_edge, down_edge - phi);
            down_edge -= phi;
            (Side::Decrease, s.0, s.1)
        };
        let label = alloc::format!("{}={}", names[i], format_display(contributions[i].display_value));
        segments.push(Segment { feature: names[i].clone(), label, side, phi, start, end, x0: px(start), x1: px(end) });
    }

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<line x1=\"{MARGIN}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\"/>", BAND_Y + BAND_H + 6.0, WIDTH - MARGIN, BAND_Y + BAND_H + 6.0);
    for (k, s) in segments.iter().enumerate() {
        let color = if s.side == Side::Increase { RED } else { BLUE };
        let _ = writeln!(
            svg,
            "<rect class=\"{}\" x=\"{:.2}\" y=\"{BAND_Y}\" width=\"{:.2}\" height=\"{BAND_H}\" fill=\"{color}\" stroke=\"white\" stroke-width=\"1\"><title>{} ({:+.4})</title></rect>",
            if s.side == Side::Increase { "increase" } else { "decrease" },
            s.x0,
            (s.x1 - s.x0).max(0.0),
            escape(&s.label),
            s.phi
        );
        // Alternate label rows to limit overlap.
        let ly = BAND_Y + BAND_H + 22.0 + 14.0 * (k % 3) as f64;
        let _ = writeln!(
            svg,
            "<text class=\"label {}\" x=\"{:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" fill=\"{color}\">{}</text>",
            if s.side == Side::Increase { "increase" } else { "decrease" },
            0.5 * (s.x0 + s.x1),
            escape(&s.label)
        );
    }
    let bx = px(e.base_value);
    let _ = writeln!(svg, "<line class=\"base\" x1=\"{bx:.2}\" y1=\"{:.2}\" x2=\"{bx:.2}\" y2=\"{:.2}\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>", BAND_Y - 24.0, BAND_Y + BAND_H + 6.0);
    let _ = writeln!(svg, "<text x=\"{bx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#555\">base value {:.4}</text>", BAND_Y - 30.0, e.base_value);
    if !segments.is_empty() {
        let fx = px(f);
        let _ = writeln!(svg, "<line class=\"output\" x1=\"{fx:.2}\" y1=\"{:.2}\" x2=\"{fx:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>", BAND_Y - 8.0, BAND_Y + BAND_H + 6.0);
        let space = match e.space {
            OutputSpace::Probability => "probability",
            OutputSpace::Margin => "log-odds",
        };
        let _ = writeln!(svg, "<text x=\"{fx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-weight=\"bold\">f(x) = {:.4} ({space})</text>", BAND_Y - 12.0, f);
    }
    svg.push_str("</svg>\n");

    ForcePlot {
        svg,
        payload: ForcePayload {
            base_value: e.base_value,
            model_output: f,
            space: e.space,
            contributions,
            segments,
            domain: [lo, hi],
            px_per_unit: scale,
            width: WIDTH,
            height: HEIGHT,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expl(phi: Vec<f64>) -> ShapExplanation {
        let n = phi.len();
        ShapExplanation {
            base_value: 0.2,
            model_output: 0.2 + phi.iter().sum::<f64>(),
            contributions: phi,
            feature_names: (0..n).map(|i| alloc::format!("F{i}")).collect(),
            display_values: (0..n).map(|i| i as f64 * 1.5).collect(),
            space: OutputSpace::Margin,
            method: "test".into(),
        }
    }

    #[test]
    fn zero_contributions_draw_only_the_base() {
        let p = render_force_plot(&expl(alloc::vec![0.0, 0.0]), None);
        assert!(p.payload.segments.is_empty());
        assert!(p.svg.contains("class=\"base\""));
        assert!(!p.svg.contains("<rect class"));
        assert!(!p.svg.contains("class=\"output\""));
    }

    #[test]
    fn band_widths_are_proportional() {
        let p = render_force_plot(&expl(alloc::vec![0.3, -0.1]), None);
        let s = &p.payload.segments;
        assert_eq!(s[0].side, Side::Increase);
        assert_eq!(s[1].side, Side::Decrease);
        let w0 = s[0].x1 - s[0].x0;
        let w1 = s[1].x1 - s[1].x0;
        assert!((w0 / w1 - 3.0).abs() < 1e-9);
        // Opposite sides of the output marker.
        let fx = 40.0 + (p.payload.model_output - p.payload.domain[0]) * p.payload.px_per_unit;
        assert!((s[0].x1 - fx).abs() < 1e-9 && (s[1].x0 - fx).abs() < 1e-9);
        assert_eq!(s[0].label, "F0=0");
        assert_eq!(s[1].label, "F1=1.50");
    }
}
