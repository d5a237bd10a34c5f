//! Minimal SVG line charts and heat maps.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            points,
            style: Style::Line,
        }
    }

    pub fn markers(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            points,
            style: Style::Markers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Same scale on both axes, for map views.
    pub equal_axes: bool,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            equal_axes: false,
        }
    }

    pub fn with(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }

    pub fn equal_axes(mut self) -> Self {
        self.equal_axes = true;
        self
    }

    pub fn render(&self) -> String {
        let finite = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite();
        let all: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().filter(finite).copied()).collect();
        let (mut x0, mut x1) = bounds(all.iter().map(|p| p.0));
        let (mut y0, mut y1) = bounds(all.iter().map(|p| p.1));
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        if self.equal_axes {
            let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            x0 = cx - scale * pw / 2.0;
            x1 = cx + scale * pw / 2.0;
            y0 = cy - scale * ph / 2.0;
            y1 = cy + scale * ph / 2.0;
        }
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let mut out = header();
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for t in ticks(x0, x1) {
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{MARGIN_T}" x2="{x:.1}" y2="{yb:.1}" stroke="#ddd"/><text x="{x:.1}" y="{ty:.1}" text-anchor="middle" font-size="11">{}</text>"##,
                fmt_tick(t),
                x = sx(t),
                yb = MARGIN_T + ph,
                ty = MARGIN_T + ph + 16.0
            );
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{xr:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{tx:.1}" y="{ty:.1}" text-anchor="end" font-size="11">{}</text>"##,
                fmt_tick(t),
                y = sy(t),
                xr = MARGIN_L + pw,
                tx = MARGIN_L - 6.0,
                ty = sy(t) + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle" font-size="13">{}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let _ = writeln!(out, r#"<g class="series" data-name="{}">"#, escape(&s.name));
            match s.style {
                Style::Line => {
                    // Non-finite samples break the polyline.
                    for run in s.points.split(|p| !(p.0.is_finite() && p.1.is_finite())) {
                        if run.is_empty() {
                            continue;
                        }
                        let pts: Vec<String> = run.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                        let _ = writeln!(
                            out,
                            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                            pts.join(" ")
                        );
                    }
                }
                Style::Markers => {
                    for p in s.points.iter().filter(finite) {
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                            sx(p.0),
                            sy(p.1)
                        );
                    }
                }
            }
            let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
            let lx = MARGIN_L + pw + 12.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx:.1}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
                ly - 4.0,
                lx + 20.0,
                ly + 1.0,
                escape(&s.name)
            );
            out.push_str("</g>\n");
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Boolean grid as colored cells; `mask[i][j]` sits at `(xs[i], ys[j])`.
/// An optional marker highlights one cell.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], mask: &[Vec<bool>], mark: Option<(f64, f64)>) -> String {
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let (x0, x1) = bounds(xs.iter().copied());
    let (y0, y1) = bounds(ys.iter().copied());
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
    let cw = pw / xs.len().max(1) as f64;
    let ch = ph / ys.len().max(1) as f64;

    let mut out = header();
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="#f4f4f4" stroke="#444"/>"##
    );
    out.push_str(r#"<g class="mask">"#);
    out.push('\n');
    for (i, row) in mask.iter().enumerate() {
        // Runs of feasible cells along y become one rectangle.
        let mut j = 0;
        while j < row.len() {
            if !row[j] {
                j += 1;
                continue;
            }
            let start = j;
            while j < row.len() && row[j] {
                j += 1;
            }
            let x = MARGIN_L + i as f64 * cw;
            let y = MARGIN_T + ph - j as f64 * ch;
            let _ = writeln!(
                out,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4c9a2a"/>"##,
                cw + 0.05,
                (j - start) as f64 * ch + 0.05
            );
        }
    }
    out.push_str("</g>\n");
    for t in ticks(x0, x1) {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            sx(t),
            MARGIN_T + ph + 16.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y0, y1) {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#,
            MARGIN_L - 6.0,
            sy(t) + 4.0,
            fmt_tick(t)
        );
    }
    if let Some((x, y)) = mark {
        let _ = writeln!(
            out,
            r##"<circle class="chosen" cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="#d62728" stroke-width="2"/>"##,
            sx(x),
            sy(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle" font-size="13">{}</text>"#,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Padded data range; degenerate ranges are widened to unit width.
fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Round tick positions, about five per axis.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_every_series() {
        let svg = Chart::new("t", "x", "y")
            .with(Series::line("a", vec![(0.0, 0.0), (1.0, 1.0)]))
            .with(Series::markers("b & c", vec![(0.5, 0.2)]))
            .render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(r#"data-name="a""#));
        assert!(svg.contains(r#"data-name="b &amp; c""#));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn nan_splits_lines() {
        let svg = Chart::new("t", "x", "y")
            .with(Series::line("a", vec![(0.0, 0.0), (1.0, f64::NAN), (2.0, 1.0), (3.0, 2.0)]))
            .render();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_and_flat_charts_render() {
        let svg = Chart::new("t", "x", "y").render();
        assert!(svg.contains("</svg>"));
        let flat = Chart::new("t", "x", "y").with(Series::line("a", vec![(1.0, 2.0), (1.0, 2.0)])).render();
        assert!(!flat.contains("NaN") && !flat.contains("inf"));
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(fmt_tick(0.30000000000000004), "0.3");
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn heatmap_merges_runs() {
        let mask = vec![vec![true, true, false], vec![false, true, true]];
        let svg = heatmap("m", "kp", "kd", &[1.0, 2.0], &[0.0, 0.5, 1.0], &mask, Some((1.0, 0.5)));
        assert_eq!(svg.matches(r##"fill="#4c9a2a""##).count(), 2);
        assert!(svg.contains(r#"class="chosen""#));
    }
}
