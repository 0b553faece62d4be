//! CSV, JSON and SVG output for report rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportRow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Writes `report.csv`, `report.json` and one `<metric>_<stat>.svg` per
/// charted statistic into `outdir`, returning the paths in write order.
/// Output bytes depend only on the rows.
pub fn emit_reports(rows: &[ReportRow], outdir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no report rows to write".into()));
    }
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            Format::Csv => {
                let path = outdir.join("report.csv");
                write_csv(rows, fs::File::create(&path)?)?;
                written.push(path);
            }
            Format::Json => {
                let path = outdir.join("report.json");
                let mut file = fs::File::create(&path)?;
                serde_json::to_writer_pretty(&mut file, rows)?;
                file.write_all(b"\n")?;
                written.push(path);
            }
            Format::Svg => {
                for (name, svg) in charts(rows) {
                    let path = outdir.join(format!("{name}.svg"));
                    fs::write(&path, svg)?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

pub fn write_csv(rows: &[ReportRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A line series keyed by rank, item coarseness and lift.
type SeriesKey = (usize, u64, String);

/// One chart per metric and statistic that has a defined value in some grid
/// cell: value against buyer coarseness, one polyline per series.
pub fn charts(rows: &[ReportRow]) -> Vec<(String, String)> {
    let mut grouped: BTreeMap<(String, String), BTreeMap<SeriesKey, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.cell > 0 && r.status == "ok") {
        if let Some(v) = r.value.filter(|v| v.is_finite()) {
            grouped
                .entry((r.metric.clone(), r.stat.clone()))
                .or_default()
                .entry((r.rank, r.item_coarseness.to_bits(), r.lift.clone()))
                .or_default()
                .push((r.buyer_coarseness, v));
        }
    }
    grouped
        .into_iter()
        .map(|((metric, stat), series)| {
            let svg = line_chart(&format!("{metric} ({stat})"), &series);
            (format!("{metric}_{stat}"), svg)
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

fn line_chart(title: &str, series: &BTreeMap<SeriesKey, Vec<(f64, f64)>>) -> String {
    let points = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" font-size="11">{}</text>"#,
            sx(v),
            bottom + 16.0,
            fmt_tick(v)
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            left - 6.0,
            sy(v) + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">buyer coarseness (%)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    for (k, ((rank, items, lift), pts)) in series.iter().enumerate() {
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}">rank {rank}, items {}%, {}</text>"#,
            left + 8.0,
            top + 14.0 * (k as f64 + 1.0),
            fmt_tick(f64::from_bits(*items)),
            escape(lift)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let t = format!("{v:.4}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Spearman rank correlation with average ranks for ties; `None` for fewer
/// than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0; // 1-based ranks start+1 ..= end
        for &k in &order[start..end] {
            out[k] = avg;
        }
        start = end;
    }
    out
}
