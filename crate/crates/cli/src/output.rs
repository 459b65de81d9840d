//! Emission of CSV tables, SVG renderings and JSON summaries.
//!
//! Numbers are written with Rust's shortest round-trip formatting so the
//! files reproduce bit-for-bit from the same inputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

/// A column-oriented table with a commented header.
#[derive(Debug, Clone, Default)]
pub struct Table {
    /// Column names; units are part of the name (`t_s`, `omega_01_rad_per_s`).
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Extra `# key: value` header lines.
    pub comments: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self, subcommand: &str, hash: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# fluxlab {subcommand}");
        let _ = writeln!(out, "# config_hash: {hash}");
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_num(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// A value matrix on a row axis × column axis.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub row_axis: String,
    pub column_axis: String,
    pub value: String,
    pub rows: Vec<f64>,
    pub columns: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Matrix {
    /// One CSV line per row-axis value; column-axis values in the header.
    pub fn to_csv(&self, subcommand: &str, hash: &str) -> String {
        let mut table = Table::new(&[]);
        table.comment(format!("rows: {}", self.row_axis));
        table.comment(format!("columns: {}", self.column_axis));
        table.comment(format!("values: {}", self.value));
        table.columns = std::iter::once(self.row_axis.clone())
            .chain(self.columns.iter().map(|&c| fmt_num(c)))
            .collect();
        table.rows = self
            .rows
            .iter()
            .zip(&self.values)
            .map(|(&r, vals)| std::iter::once(r).chain(vals.iter().copied()).collect())
            .collect();
        table.to_csv(subcommand, hash)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1b9e77", "#7570b3", "#d95f02", "#e7298a", "#66a61e", "#e6ab02",
];

fn svg_header(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<title>{}</title>\n",
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Polylines of each `(name, y)` series against `x`.
pub fn line_svg(title: &str, x_label: &str, x: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let mut out = svg_header(title);
    let (x0, x1) = range(x.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|(_, y)| y.iter().copied()));
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (k, (name, y)) in series.iter().enumerate() {
        let points: Vec<String> = x
            .iter()
            .zip(y)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b)))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>",
            points.join(" "),
            escape(name)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN - 120.0,
            MARGIN + 16.0 * (k + 1) as f64,
            escape(name)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{} [{} .. {}]</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(x_label),
        fmt_num(x0),
        fmt_num(x1)
    );
    out.push_str("</svg>\n");
    out
}

/// Colour-mapped rectangles; the exact extrema are recorded as attributes.
pub fn heatmap_svg(title: &str, matrix: &Matrix) -> String {
    let mut out = svg_header(title);
    let (lo, hi) = matrix.min_max();
    let n_rows = matrix.values.len().max(1) as f64;
    let n_cols = matrix.columns.len().max(1) as f64;
    let cw = (WIDTH - 2.0 * MARGIN) / n_cols;
    let ch = (HEIGHT - 2.0 * MARGIN) / n_rows;
    let _ = writeln!(
        out,
        "<g data-min=\"{}\" data-max=\"{}\" data-rows=\"{}\" data-columns=\"{}\">",
        fmt_num(lo),
        fmt_num(hi),
        escape(&matrix.row_axis),
        escape(&matrix.column_axis)
    );
    for (r, row) in matrix.values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = if hi > lo && v.is_finite() {
                (v - lo) / (hi - lo)
            } else {
                0.0
            };
            // viridis-like ramp from dark blue to yellow
            let (red, green, blue) = (
                (68.0 + t * (253.0 - 68.0)) as u8,
                (1.0 + t * (231.0 - 1.0)) as u8,
                (84.0 + t * (37.0 - 84.0)) as u8,
            );
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#{red:02x}{green:02x}{blue:02x}\" data-value=\"{}\"/>",
                MARGIN + c as f64 * cw,
                HEIGHT - MARGIN - (r + 1) as f64 * ch,
                cw,
                ch,
                fmt_num(v)
            );
        }
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{} (columns) vs {} (rows)</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(&matrix.column_axis),
        escape(&matrix.row_axis)
    );
    out.push_str("</svg>\n");
    out
}

/// Writes `content` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf, CliError> {
    let unwritable =
        |e: std::io::Error| CliError::Config(format!("output directory {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(unwritable)?;
    tmp.write_all(content).map_err(unwritable)?;
    tmp.as_file().sync_all().map_err(unwritable)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| unwritable(e.error))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1e-7, 5.77e9 * std::f64::consts::TAU, -3.25, 1.0 / 3.0] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    #[test]
    fn empty_table_is_header_only() {
        let csv = Table::new(&["t_s", "p2"]).to_csv("decay", "abc");
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, vec!["t_s,p2"]);
    }

    #[test]
    fn heatmap_records_matrix_extrema() {
        let m = Matrix {
            row_axis: "a".into(),
            column_axis: "b".into(),
            value: "p".into(),
            rows: vec![0.0, 1.0],
            columns: vec![0.0, 1.0],
            values: vec![vec![0.25, 0.5], vec![0.125, 0.75]],
        };
        let svg = heatmap_svg("t", &m);
        assert!(svg.contains("data-min=\"0.125\" data-max=\"0.75\""));
    }
}
