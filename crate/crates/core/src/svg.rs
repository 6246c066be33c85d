//! Minimal SVG line charts with optional point-wise bands.

use std::fmt::Write;

use crate::targeting::{PolicyCurve, SimulationResult};

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 340.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 46.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Lower and upper band edges, one pair per point.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_range(chart: &Chart) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &chart.series {
        let band = s.band.iter().flat_map(|(l, u)| l.iter().chain(u));
        for &v in s.y.iter().chain(band).filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, chart: &Chart, ox: f64, oy: f64) {
    let (y0, y1) = y_range(chart);
    let (x0, x1) = (0.0, 1.0);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| ox + MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        ox + MARGIN_L + pw / 2.0,
        oy + 20.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        sx(x0),
        sy(y1)
    );
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{x:.2}</text>"#,
            sx(x),
            sy(y0) + 14.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{y:.3}</text>"#,
            sx(x0) - 4.0,
            sy(y) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        ox + MARGIN_L + pw / 2.0,
        oy + PANEL_H - 8.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 14.0,
        oy + MARGIN_T + ph / 2.0,
        ox + 14.0,
        oy + MARGIN_T + ph / 2.0,
        escape(&chart.y_label)
    );
    for (si, s) in chart.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some((lo, hi)) = &s.band {
            let mut pts: Vec<String> = s.x.iter().zip(hi).map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            pts.extend(s.x.iter().zip(lo).rev().map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y))));
            let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = s.x.iter().zip(&s.y).map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, pts.join(" "));
        let ly = oy + MARGIN_T + 8.0 + 16.0 * si as f64;
        let lx = ox + PANEL_W - MARGIN_R + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            lx + 20.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
}

/// Renders charts on a grid with `cols` columns.
pub fn render(charts: &[Chart], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = charts.len().div_ceil(cols).max(1);
    let (w, h) = (PANEL_W * cols.min(charts.len().max(1)) as f64, PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, chart) in charts.iter().enumerate() {
        render_panel(&mut out, chart, PANEL_W * (i % cols) as f64, PANEL_H * (i / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Policy-value curves with point-wise 95% bands `value ± 1.96 se` around
/// each policy curve, plus the random benchmark.
pub fn curves_chart(curves: &[PolicyCurve], title: &str) -> String {
    let mut series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            label: c.policy.to_string(),
            x: c.q_grid.clone(),
            y: c.value.clone(),
            band: Some((
                c.value.iter().zip(&c.se_delta).map(|(v, s)| v - 1.96 * s).collect(),
                c.value.iter().zip(&c.se_delta).map(|(v, s)| v + 1.96 * s).collect(),
            )),
        })
        .collect();
    if let Some(c) = curves.first() {
        series.push(Series { label: "random allocation".into(), x: c.q_grid.clone(), y: c.value_random.clone(), band: None });
    }
    let chart = Chart {
        title: title.into(),
        x_label: "fraction treated".into(),
        y_label: "estimated outcome rate".into(),
        series,
    };
    render(&[chart], 1)
}

/// One panel per heterogeneity multiplier, two panels per row.
pub fn simulation_chart(result: &SimulationResult) -> String {
    let draws = if result.n_draws == 1 { "single draw".to_string() } else { format!("mean of {} draws", result.n_draws) };
    let charts: Vec<Chart> = result
        .panels
        .iter()
        .map(|p| Chart {
            title: format!("lambda = {} ({draws})", p.lambda),
            x_label: "fraction treated".into(),
            y_label: "true outcome rate".into(),
            series: p
                .curves
                .iter()
                .map(|c| Series { label: c.policy.to_string(), x: result.q_grid.clone(), y: c.value.clone(), band: None })
                .collect(),
        })
        .collect();
    render(&charts, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "q".into(),
            y_label: "v".into(),
            series: vec![Series {
                label: "s".into(),
                x: vec![0.0, 0.5, 1.0],
                y: vec![0.2, 0.3, 0.4],
                band: Some((vec![0.1, 0.2, 0.3], vec![0.3, 0.4, 0.5])),
            }],
        };
        let svg = render(&[chart.clone(), chart], 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
