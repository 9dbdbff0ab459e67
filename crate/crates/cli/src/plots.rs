//! Minimal SVG line charts for simulation reports. One chart per scenario:
//! grid value on the horizontal axis, mean relative prediction error per
//! estimator as a polyline. No external plotting dependency; the output is
//! plain SVG 1.1.

use estfuse::scenarios::{ReportRow, ScenarioReport, ESTIMATOR_LABELS};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 3] = ["#555555", "#c0392b", "#2e6da4"];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn from_values(values: impl Iterator<Item = f64>) -> Axis {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            // Flat series: pad so the polyline sits mid-chart.
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad }
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / count as f64)
            .collect()
    }
}

fn sx(axis: &Axis, v: f64) -> f64 {
    MARGIN_L + (v - axis.lo) / (axis.hi - axis.lo) * (WIDTH - MARGIN_L - MARGIN_R)
}

fn sy(axis: &Axis, v: f64) -> f64 {
    HEIGHT - MARGIN_B - (v - axis.lo) / (axis.hi - axis.lo) * (HEIGHT - MARGIN_T - MARGIN_B)
}

fn series<'a>(report: &'a ScenarioReport, estimator: &str) -> Vec<&'a ReportRow> {
    let mut rows: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| r.estimator == estimator)
        .collect();
    rows.sort_by(|a, b| a.grid.total_cmp(&b.grid));
    rows
}

/// Render the relative-PMSE chart for one scenario report.
pub fn pmse_chart(report: &ScenarioReport) -> String {
    let xaxis = Axis::from_values(report.rows.iter().map(|r| r.grid));
    let yaxis = Axis::from_values(report.rows.iter().map(|r| r.rel_pmse_mean));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Axes and tick labels.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for t in xaxis.ticks(6) {
        let x = sx(&xaxis, t);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{t:.3}</text>\n",
            y0 + 18.0
        ));
    }
    for t in yaxis.ticks(6) {
        let y = sy(&yaxis, t);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{t:.3}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        report.grid_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">relative PMSE</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    // One polyline per estimator plus a legend swatch.
    for (i, est) in ESTIMATOR_LABELS.iter().enumerate() {
        let rows = series(report, est);
        if rows.is_empty() {
            continue;
        }
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.rel_pmse_mean.is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(&xaxis, r.grid), sy(&yaxis, r.rel_pmse_mean)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            points.join(" "),
            COLORS[i]
        ));
        let ly = MARGIN_T + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            x1 - 110.0,
            x1 - 86.0,
            COLORS[i]
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{est}</text>\n",
            x1 - 80.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
