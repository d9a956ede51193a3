//! CSV, JSON and SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mmctune_core::simkit::RunLog;
use serde::Serialize;

use crate::CliError;

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Run log as CSV, keeping every `decimation`-th row.
pub fn log_csv(log: &RunLog, decimation: usize) -> String {
    let step = decimation.max(1);
    let mut out = String::new();
    let names: Vec<&str> = log.channels.iter().map(|c| c.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in (0..log.len()).step_by(step) {
        let row: Vec<String> = log.channels.iter().map(|c| num(c.data[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parsed numeric CSV with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn read_csv(path: &Path) -> Result<Table, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(CliError::Config(format!(
                "{}: row {} has {} fields",
                path.display(),
                n + 2,
                cells.len()
            )));
        }
        for (col, cell) in columns.iter_mut().zip(cells) {
            let v = cell.trim().parse::<f64>().map_err(|_| {
                CliError::Config(format!("{}: '{cell}' on row {} is not a number", path.display(), n + 2))
            })?;
            col.push(v);
        }
    }
    Ok(Table { header, columns })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).unwrap_or_default();
    s.push('\n');
    s
}

pub fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

pub fn out_path(dir: &Path, stem: &str, fp: u64, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{}.{ext}", fingerprint_hex(fp)))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One panel of a stacked line plot.
pub struct Panel<'a> {
    pub title: &'a str,
    pub series: Vec<(&'a str, &'a [f64])>,
}

/// Self-contained SVG with vertically stacked panels sharing the x axis.
pub fn svg_plot(title: &str, x: &[f64], panels: &[Panel<'_>]) -> String {
    let (w, ph, margin_l, margin_r, top) = (900.0, 220.0, 70.0, 20.0, 40.0);
    let height = top + ph * panels.len() as f64 + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let (x0, x1) = range(x.iter().copied());
    let pw = w - margin_l - margin_r;
    for (k, panel) in panels.iter().enumerate() {
        let y_top = top + k as f64 * ph;
        let plot_h = ph - 40.0;
        let (mut y0, mut y1) = range(panel.series.iter().flat_map(|(_, d)| d.iter().copied()));
        if y1 - y0 < 1e-12 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let sx = |v: f64| margin_l + (v - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * pw;
        let sy = |v: f64| y_top + 20.0 + (y1 - v) / (y1 - y0) * plot_h;
        let _ = writeln!(
            s,
            r##"<rect x="{margin_l}" y="{}" width="{pw}" height="{plot_h}" fill="none" stroke="#888"/>"##,
            y_top + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{margin_l}" y="{}">{}</text>"#,
            y_top + 14.0,
            escape(panel.title)
        );
        for (v, anchor) in [(y1, "start"), (y0, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="{}">{}</text>"#,
                margin_l - 4.0,
                sy(v),
                if anchor == "start" { "hanging" } else { "auto" },
                short(v)
            );
        }
        for (j, (name, data)) in panel.series.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let stride = (data.len() / 4000).max(1);
            let pts: Vec<String> = x
                .iter()
                .zip(data.iter())
                .step_by(stride)
                .filter(|(_, v)| v.is_finite())
                .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
                w - margin_r - 4.0,
                y_top + 34.0 + 13.0 * j as f64,
                escape(name)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{margin_l}" y="{}">{}</text><text x="{}" y="{}" text-anchor="end">{} s</text>"#,
        height - 10.0,
        short(x0),
        w - margin_r,
        height - 10.0,
        short(x1)
    );
    s.push_str("</svg>\n");
    s
}

fn range(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn short(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
