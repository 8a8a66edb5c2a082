//! Training-curve charts as standalone SVG files.
//!
//! Charts are written directly as SVG text: one polyline per series,
//! axes with a handful of labeled ticks, and a legend. Raw curves are
//! drawn faint with a median-smoothed overlay, since episodic scores
//! are spiky enough to hide the trend.

use std::path::Path;

use crate::error::{Error, Result};

/// One curve: score against iteration (or any other x).
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid_config("a series needs at least one point"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::NonFinite("series point".into()));
        }
        Ok(Series { label: label.into(), points })
    }
}

/// Running median with a centered window. The window must be odd so
/// the center is well defined; it shrinks symmetrically toward the
/// edges. Window 1 is the identity.
pub fn median_smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid_config("smoothing window must be odd and positive"));
    }
    if window == 1 {
        return Ok(values.to_vec());
    }
    let half = window / 2;
    let mut out = Vec::with_capacity(values.len());
    let mut scratch = Vec::with_capacity(window);
    for i in 0..values.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(values.len());
        scratch.clear();
        scratch.extend_from_slice(&values[lo..hi]);
        scratch.sort_by(f64::total_cmp);
        let n = scratch.len();
        let median = if n % 2 == 1 {
            scratch[n / 2]
        } else {
            (scratch[n / 2 - 1] + scratch[n / 2]) / 2.0
        };
        out.push(median);
    }
    Ok(out)
}

/// Reads a training trace CSV into a series of center score against
/// iteration. Columns are located by header name, so extra columns and
/// reordering are harmless.
pub fn read_trace_series(path: &Path, label: &str) -> Result<Series> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::decode(format!("trace {} lacks column {name}", path.display())))
    };
    let x_col = col("iteration")?;
    let y_col = col("center_score")?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::decode(format!("bad trace row in {}", path.display())))
        };
        points.push((parse(x_col)?, parse(y_col)?));
    }
    Series::new(label, points)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs();
    if !(0.01..100_000.0).contains(&magnitude) {
        return format!("{v:.1e}");
    }
    let text = format!("{v:.3}");
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_owned()
}

struct Extent {
    min: f64,
    max: f64,
}

impl Extent {
    fn of(values: impl Iterator<Item = f64>) -> Extent {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        // A flat extent still needs a nonzero span to map onto pixels.
        if min == max {
            let pad = if min == 0.0 { 0.5 } else { min.abs() * 0.05 };
            min -= pad;
            max += pad;
        }
        Extent { min, max }
    }

    fn to_unit(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

/// Renders series as one SVG line chart. Each series is drawn twice:
/// the raw curve faint, the median-smoothed curve solid.
pub fn render_chart(
    series: &[Series],
    title: &str,
    y_label: &str,
    smooth_window: usize,
) -> Result<String> {
    if series.is_empty() {
        return Err(Error::invalid_config("chart needs at least one series"));
    }
    let x_extent = Extent::of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y_extent = Extent::of(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| {
        (
            MARGIN_LEFT + x_extent.to_unit(x) * plot_w,
            // SVG y grows downward; the chart grows upward.
            MARGIN_TOP + (1.0 - y_extent.to_unit(y)) * plot_h,
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n",
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(title),
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_LEFT + plot_w,
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_TOP,
    ));
    let ticks = 5;
    for i in 0..=ticks {
        let f = i as f64 / ticks as f64;
        let xv = x_extent.min + f * (x_extent.max - x_extent.min);
        let (px, _) = to_px(xv, y_extent.min);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0,
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            format_tick(xv),
        ));
        let yv = y_extent.min + f * (y_extent.max - y_extent.min);
        let (_, py) = to_px(x_extent.min, yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n",
            x0 - 5.0,
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            py + 4.0,
            format_tick(yv),
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">iteration</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape_xml(y_label),
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let ys: Vec<f64> = s.points.iter().map(|p| p.1).collect();
        let smoothed = median_smooth(&ys, smooth_window)?;
        for (values, opacity, width) in [(&ys, 0.25, 1.0), (&smoothed, 1.0, 2.0)] {
            if s.points.len() == 1 {
                let (px, py) = to_px(s.points[0].0, values[0]);
                svg.push_str(&format!(
                    "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\" \
                     fill-opacity=\"{opacity}\"/>\n",
                ));
                continue;
            }
            let coords: Vec<String> = s
                .points
                .iter()
                .zip(values)
                .map(|(&(x, _), &y)| {
                    let (px, py) = to_px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-opacity=\"{opacity}\" stroke-width=\"{width}\"/>\n",
                coords.join(" "),
            ));
        }
        let ly = MARGIN_TOP + 16.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n",
            WIDTH - 170.0,
            WIDTH - 150.0,
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            WIDTH - 144.0,
            ly + 4.0,
            escape_xml(&s.label),
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and writes a chart next to the traces it came from.
pub fn write_chart(
    path: &Path,
    series: &[Series],
    title: &str,
    y_label: &str,
    smooth_window: usize,
) -> Result<()> {
    let svg = render_chart(series, title, y_label, smooth_window)?;
    std::fs::write(path, svg).map_err(Error::from)
}
