//! Minimal deterministic SVG line charts: axes, ticks, polylines, legend.
//! No timestamps or random ids — the same data always renders the same
//! bytes. CSV stays the canonical artifact; these are for eyeballs.

use std::fmt::Write as _;

/// One plotted curve.
pub struct Series {
    pub label: String,
    /// (x, y) points in data coordinates; NaN y-values break the line.
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn fmt(v: f64) -> String {
    // Fixed short decimal keeps output byte-stable across runs.
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Spreads `count` ticks evenly over [lo, hi].
fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

impl Chart {
    /// Renders the chart to SVG text.
    pub fn render(&self) -> String {
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() {
                    x_lo = x_lo.min(x);
                    x_hi = x_hi.max(x);
                }
                if y.is_finite() {
                    y_lo = y_lo.min(y);
                    y_hi = y_hi.max(y);
                }
            }
        }
        if !x_lo.is_finite() || !y_lo.is_finite() {
            x_lo = 0.0;
            x_hi = 1.0;
            y_lo = 0.0;
            y_hi = 1.0;
        }
        if x_hi - x_lo < 1e-12 {
            x_hi = x_lo + 1.0;
        }
        if y_hi - y_lo < 1e-12 {
            y_hi = y_lo + 1.0;
        }
        // Pad the y-range so curves don't sit on the frame.
        let pad = 0.06 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;

        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(
            out,
            "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            MARGIN_L + plot_w / 2.0,
            escape(&self.title)
        );

        // Frame.
        let _ = writeln!(
            out,
            "  <rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
             fill=\"none\" stroke=\"#444\"/>"
        );

        // Ticks and grid.
        for t in ticks(x_lo, x_hi, 6) {
            let x = sx(t);
            let _ = writeln!(
                out,
                "  <line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>",
                MARGIN_T,
                MARGIN_T + plot_h
            );
            let _ = writeln!(
                out,
                "  <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                MARGIN_T + plot_h + 16.0,
                fmt(t)
            );
        }
        for t in ticks(y_lo, y_hi, 6) {
            let y = sy(t);
            let _ = writeln!(
                out,
                "  <line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
                MARGIN_L + plot_w
            );
            let _ = writeln!(
                out,
                "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                MARGIN_L - 6.0,
                y + 4.0,
                fmt(t)
            );
        }

        // Axis labels.
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + plot_w / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            "  <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 16 {:.1})\">{}</text>",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            escape(&self.y_label)
        );

        // Curves.
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut segment: Vec<String> = Vec::new();
            let flush = |seg: &mut Vec<String>, out: &mut String| {
                if seg.len() >= 2 {
                    let _ = writeln!(
                        out,
                        "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
                        seg.join(" ")
                    );
                }
                seg.clear();
            };
            for &(x, y) in &s.points {
                if y.is_finite() && x.is_finite() {
                    segment.push(format!("{:.1},{:.1}", sx(x), sy(y)));
                } else {
                    flush(&mut segment, &mut out);
                }
            }
            flush(&mut segment, &mut out);
            for &(x, y) in &s.points {
                if y.is_finite() && x.is_finite() {
                    let _ = writeln!(
                        out,
                        "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\"/>",
                        sx(x),
                        sy(y)
                    );
                }
            }
        }

        // Legend (top-left inside the frame).
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let y = MARGIN_T + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                "  <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
                 stroke=\"{color}\" stroke-width=\"1.8\"/>",
                MARGIN_L + 10.0,
                MARGIN_L + 34.0
            );
            let _ = writeln!(
                out,
                "  <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                MARGIN_L + 40.0,
                y + 4.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
