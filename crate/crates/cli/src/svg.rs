//! Minimal static SVG charts: stacked line panels and a scatter with `y = x`.

use std::fmt::Write;

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 40.0;
const FADED_OPACITY: f64 = 0.3;

pub const REAL_COLOR: &str = "#d62728";
pub const IDEAL_COLOR: &str = "#1f77b4";
pub const GAP_COLOR: &str = "#2ca02c";

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Points with `x` beyond this are drawn faded and dashed.
    pub fade_after: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference line, e.g. `y = 0` for a gap.
    pub reference_y: Option<f64>,
    /// Vertical marker, e.g. the stopping time.
    pub marker_x: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

/// Vertically stacked panels sharing a width.
pub fn line_chart(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let height = panel_height * panels.len() as f64;
    let mut svg = header(width, height);
    for (i, panel) in panels.iter().enumerate() {
        let xs = panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = panel
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(panel.reference_y);
        let frame = Frame {
            left: MARGIN_LEFT,
            top: i as f64 * panel_height + MARGIN_TOP,
            width: width - MARGIN_LEFT - MARGIN_RIGHT,
            height: panel_height - MARGIN_TOP - MARGIN_BOTTOM,
            x: padded_range(xs, 0.0),
            y: padded_range(ys, 0.05),
        };
        axes(&mut svg, &frame, &panel.title, &panel.x_label, &panel.y_label);
        if let Some(y) = panel.reference_y {
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-width="1"/>"##,
                frame.px(frame.x.0),
                frame.py(y),
                frame.px(frame.x.1),
                frame.py(y)
            );
        }
        if let Some(x) = panel.marker_x {
            let _ = writeln!(
                svg,
                r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#555" stroke-width="1" stroke-dasharray="2,3"/>"##,
                frame.px(x),
                frame.top,
                frame.top + frame.height
            );
        }
        for series in &panel.series {
            polyline(&mut svg, &frame, series);
        }
        legend(&mut svg, &frame, &panel.series);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter of `(x, y)` pairs over a square frame with the `y = x` diagonal.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], size: f64) -> String {
    let side = size - MARGIN_LEFT - MARGIN_RIGHT;
    let mut svg = header(size, MARGIN_TOP + side + MARGIN_BOTTOM);
    let all = points.iter().flat_map(|&(x, y)| [x, y]);
    let range = padded_range(all, 0.05);
    let frame = Frame {
        left: MARGIN_LEFT,
        top: MARGIN_TOP,
        width: side,
        height: side,
        x: range,
        y: range,
    };
    axes(&mut svg, &frame, title, x_label, y_label);
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-width="1" stroke-dasharray="4,3"/>"##,
        frame.px(range.0),
        frame.py(range.0),
        frame.px(range.1),
        frame.py(range.1)
    );
    for &(x, y) in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{IDEAL_COLOR}" fill-opacity="0.7"/>"#,
            frame.px(x),
            frame.py(y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn padded_range(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let half = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 0.5 };
        return (lo - half, hi + half);
    }
    let span = hi - lo;
    (lo - pad * span, hi + pad * span)
}

fn axes(svg: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
        f.left, f.top, f.width, f.height
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        f.left + f.width / 2.0,
        f.top - 10.0,
        escape(title)
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let xv = f.x.0 + frac * (f.x.1 - f.x.0);
        let yv = f.y.0 + frac * (f.y.1 - f.y.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            f.top + f.height + 14.0,
            tick_label(xv, f.x)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.left - 4.0,
            f.py(yv) + 4.0,
            tick_label(yv, f.y)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#eee"/>"##,
            f.left,
            f.py(yv),
            f.left + f.width,
            f.py(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        f.left + f.width / 2.0,
        f.top + f.height + 30.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        f.left - 48.0,
        f.top + f.height / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64, range: (f64, f64)) -> String {
    let span = (range.1 - range.0).abs();
    let decimals = if span >= 100.0 {
        0
    } else {
        (2.0 - span.log10().floor()).clamp(1.0, 8.0) as usize
    };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn path_points(f: &Frame, pts: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", f.px(x), f.py(y));
    }
    out
}

fn polyline(svg: &mut String, f: &Frame, s: &Series) {
    let split = match s.fade_after {
        Some(t) => s.points.iter().position(|p| p.0 > t).unwrap_or(s.points.len()),
        None => s.points.len(),
    };
    let solid = &s.points[..split];
    if !solid.is_empty() {
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"/>"#,
            path_points(f, solid),
            s.color
        );
    }
    if split < s.points.len() {
        // overlap one point so the faded tail connects
        let faded = &s.points[split.saturating_sub(1)..];
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="{FADED_OPACITY}" stroke-dasharray="5,3"/>"#,
            path_points(f, faded),
            s.color
        );
    }
}

fn legend(svg: &mut String, f: &Frame, series: &[Series]) {
    for (i, s) in series.iter().enumerate() {
        let y = f.top + 14.0 + 14.0 * i as f64;
        let x = f.left + f.width - 120.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
            x,
            y - 4.0,
            x + 18.0,
            y - 4.0,
            s.color
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 24.0, y, escape(&s.label));
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: Vec<(f64, f64)>, fade_after: Option<f64>) -> Series {
        Series { label: "a".into(), color: REAL_COLOR, points, fade_after }
    }

    #[test]
    fn fade_splits_the_curve() {
        let panel = Panel {
            series: vec![series(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2), (3.0, 0.1)], Some(1.0))],
            ..Default::default()
        };
        let svg = line_chart(&[panel], 400.0, 200.0);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-opacity").count(), 1);
    }

    #[test]
    fn no_fade_draws_one_line() {
        let panel = Panel { series: vec![series(vec![(0.0, 1.0), (1.0, 0.5)], None)], ..Default::default() };
        assert_eq!(line_chart(&[panel], 400.0, 200.0).matches("<polyline").count(), 1);
    }

    #[test]
    fn identical_points_lie_on_the_diagonal() {
        let pts = [(0.1, 0.1), (0.3, 0.3), (0.2, 0.2)];
        let svg = scatter("t", "x", "y", &pts, 300.0);
        // every circle's pixel coordinates satisfy cx + cy = const on a square frame
        let circles: Vec<(f64, f64)> = svg
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let grab = |key: &str| -> f64 {
                    let start = l.find(key).unwrap() + key.len() + 2;
                    l[start..].split('"').next().unwrap().parse().unwrap()
                };
                (grab("cx"), grab("cy"))
            })
            .collect();
        assert_eq!(circles.len(), 3);
        let sums: Vec<f64> = circles.iter().map(|(x, y)| x + y).collect();
        assert!(sums.iter().all(|s| (s - sums[0]).abs() < 0.02), "{sums:?}");
    }

    #[test]
    fn text_is_escaped() {
        let svg = scatter("a<b & c", "x", "y", &[(0.0, 1.0)], 200.0);
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
