//! Report emission: a comparison table (CSV + JSON) over ranking variants
//! and static SVG line charts for hyperparameter sweeps.
//!
//! Everything is plain deterministic text, so re-emitting a report from the
//! same inputs reproduces the files byte for byte.

use crate::error::{CrumError, Result};
use crate::metrics::MetricsReport;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One swept axis: several labeled runs measured at the same x ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSweep {
    /// File stem of the emitted plots, e.g. "pair-count".
    pub name: String,
    /// Axis caption, e.g. "sampled pairs per list".
    pub x_label: String,
    /// Tick labels, one per measured point.
    pub x_ticks: Vec<String>,
    /// Lines: a label and one metrics row per tick.
    pub series: Vec<(String, Vec<MetricsReport>)>,
}

impl MetricSweep {
    fn validate(&self) -> Result<()> {
        if self.x_ticks.is_empty() || self.series.is_empty() {
            return Err(CrumError::Config(format!(
                "sweep '{}' needs at least one tick and one series",
                self.name
            )));
        }
        for (label, rows) in &self.series {
            if rows.len() != self.x_ticks.len() {
                return Err(CrumError::Config(format!(
                    "sweep '{}' series '{label}' has {} rows for {} ticks",
                    self.name,
                    rows.len(),
                    self.x_ticks.len()
                )));
            }
        }
        Ok(())
    }
}

/// Paths of everything one report emission wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table_csv: PathBuf,
    pub table_json: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Flat CSV row; one line per ranking variant.
#[derive(Serialize)]
struct CsvRow<'a> {
    variant: &'a str,
    map: f64,
    ndcg_at_5: f64,
    ndcg_at_10: f64,
    clicks_per_list: f64,
    ctr: f64,
    request_count: usize,
}

/// The five plotted metrics: (file key, axis label, accessor).
type MetricAccessor = fn(&MetricsReport) -> f64;
const PLOT_METRICS: [(&str, &str, MetricAccessor); 5] = [
    ("map", "MAP", |m| m.map),
    ("ndcg5", "nDCG@5", |m| m.ndcg_at_5),
    ("ndcg10", "nDCG@10", |m| m.ndcg_at_10),
    ("clicks", "clicks per list", |m| m.clicks_per_list),
    ("ctr", "CTR", |m| m.ctr),
];

/// Writes the comparison table and one plot per sweep and metric.
///
/// Table rows are sorted by CTR ascending, so the strongest variant reads
/// last. Fails with an empty-report error when there are no rows at all.
pub fn emit_report(
    rows: &[MetricsReport],
    sweeps: &[MetricSweep],
    dir: &Path,
) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(CrumError::EmptyReport(
            "no completed evaluation rows to report".into(),
        ));
    }
    for row in rows {
        row.validate()?;
    }
    for sweep in sweeps {
        sweep.validate()?;
    }
    std::fs::create_dir_all(dir)?;

    let mut sorted: Vec<&MetricsReport> = rows.iter().collect();
    sorted.sort_by(|a, b| a.ctr.total_cmp(&b.ctr));

    let table_csv = dir.join("table.csv");
    let mut writer = csv::Writer::from_path(&table_csv)?;
    for row in &sorted {
        writer.serialize(CsvRow {
            variant: &row.variant,
            map: row.map,
            ndcg_at_5: row.ndcg_at_5,
            ndcg_at_10: row.ndcg_at_10,
            clicks_per_list: row.clicks_per_list,
            ctr: row.ctr,
            request_count: row.request_count,
        })?;
    }
    writer.flush()?;

    let table_json = dir.join("table.json");
    let sorted_owned: Vec<MetricsReport> = sorted.iter().map(|r| (*r).clone()).collect();
    std::fs::write(&table_json, serde_json::to_string_pretty(&sorted_owned)?)?;

    let mut plots = Vec::new();
    for sweep in sweeps {
        for (key, label, accessor) in PLOT_METRICS {
            let series: Vec<(String, Vec<f64>)> = sweep
                .series
                .iter()
                .map(|(name, reports)| (name.clone(), reports.iter().map(accessor).collect()))
                .collect();
            let svg = svg_line_chart(
                &format!("{label} vs {}", sweep.x_label),
                &sweep.x_label,
                label,
                &sweep.x_ticks,
                &series,
            )?;
            let path = dir.join(format!("{}-{key}.svg", sweep.name));
            std::fs::write(&path, svg)?;
            plots.push(path);
        }
    }

    Ok(ReportFiles {
        table_csv,
        table_json,
        plots,
    })
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn format_tick(value: f64) -> String {
    let s = format!("{value:.4}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() || trimmed == "-" {
        "0".to_string()
    } else {
        trimmed.to_string()
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Renders labeled polylines over shared axes as a standalone SVG document.
fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_ticks: &[String],
    series: &[(String, Vec<f64>)],
) -> Result<String> {
    if x_ticks.is_empty() || series.is_empty() {
        return Err(CrumError::Config("a chart needs ticks and series".into()));
    }
    for (label, values) in series {
        if values.len() != x_ticks.len() {
            return Err(CrumError::Config(format!(
                "series '{label}' has {} values for {} ticks",
                values.len(),
                x_ticks.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CrumError::Numeric(format!(
                "series '{label}' contains non-finite values"
            )));
        }
    }

    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const LEFT: f64 = 78.0;
    const RIGHT: f64 = 612.0;
    const TOP: f64 = 46.0;
    const BOTTOM: f64 = 344.0;

    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let mut y_min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut y_max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = y_max - y_min;
    let pad = if span > 1e-12 {
        span * 0.08
    } else {
        (y_max.abs() * 0.1).max(0.1)
    };
    y_min -= pad;
    y_max += pad;

    let x_at = |i: usize| {
        if x_ticks.len() == 1 {
            (LEFT + RIGHT) / 2.0
        } else {
            LEFT + (RIGHT - LEFT) * (i as f64) / ((x_ticks.len() - 1) as f64)
        }
    };
    let y_at = |v: f64| BOTTOM - (BOTTOM - TOP) * (v - y_min) / (y_max - y_min);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        xml_escape(title)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        xml_escape(y_label)
    ));

    // Y grid and tick labels.
    for t in 0..5 {
        let v = y_min + (y_max - y_min) * (t as f64) / 4.0;
        let y = y_at(v);
        svg.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"0.7\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 8.0,
            y + 4.0,
            format_tick(v)
        ));
    }

    // X tick labels.
    for (i, tick) in x_ticks.iter().enumerate() {
        let x = x_at(i);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{BOTTOM}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            BOTTOM + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            BOTTOM + 20.0,
            xml_escape(tick)
        ));
    }

    // Lines, points, legend.
    for (s, (label, values)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_at(i), y_at(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        for (i, &v) in values.iter().enumerate() {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x_at(i),
                y_at(v)
            ));
        }
        let ly = TOP + 8.0 + 18.0 * s as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            RIGHT - 150.0,
            RIGHT - 126.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\">{}</text>\n",
            RIGHT - 120.0,
            ly + 4.0,
            xml_escape(label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
