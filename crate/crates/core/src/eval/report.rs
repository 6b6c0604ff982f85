use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of a long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subject: Option<u32>,
    pub channel: Option<usize>,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(subject: Option<u32>, channel: Option<usize>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            subject,
            channel,
            metric: metric.into(),
            value,
        }
    }
}

/// Writes `subject,channel,metric,value` rows; missing ids are left empty.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "channel", "metric", "value"])?;
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            opt(r.subject.map(|s| s.to_string())),
            opt(r.channel.map(|c| c.to_string())),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
    Ok(rows)
}

/// Minimal SVG line chart, one polyline per `(label, x, y)` series.
pub fn svg_line_plot(title: &str, x_label: &str, series: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let pts = series.iter().flat_map(|(_, x, y)| x.iter().zip(y)).filter(|(a, b)| a.is_finite() && b.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&x, &y) in pts {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0).max(1e-12) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0).max(1e-12) * (H - 2.0 * M);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{M}\" y=\"{}\" font-size=\"10\">{x0:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{x1:.3}</text>\n\
         <text x=\"4\" y=\"{}\" font-size=\"10\">{y0:.3}</text>\n\
         <text x=\"4\" y=\"{}\" font-size=\"10\">{y1:.3}</text>\n",
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 10.0,
        escape(x_label),
        H - M,
        W - M,
        H - M,
        H - M,
        H - M + 14.0,
        W - M,
        H - M + 14.0,
        H - M,
        M + 4.0,
    );
    for (i, (label, x, y)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let points: Vec<String> = x
            .iter()
            .zip(y)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", sx(a), sy(b)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            points.join(" "),
            W - M - 120.0,
            M + 14.0 * (i as f64 + 1.0),
            escape(label)
        );
    }
    s + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
