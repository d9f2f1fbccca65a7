//! File products shared by every command: CSV tables, little-endian column
//! stores and standalone SVG plots that carry their data in a comment.

use crate::error::{Error, Result};
use crate::estimators::ExponentEstimate;
use crate::inviscid::SolutionField;
use crate::viscous::PartitionField;
use std::fmt::Write as _;
use std::io::Write;

/// Shortest round-trip text for a float, so CSVs reread bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

/// Numeric table with a header row.
pub fn write_table<W: Write>(w: W, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(headers)?;
    for (k, row) in rows.iter().enumerate() {
        if row.len() != headers.len() {
            return Err(crate::error::validation(format!("row {k} has {} cells, header has {}", row.len(), headers.len())));
        }
        out.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    Ok(out.flush()?)
}

/// Mixed text table (first columns may be labels).
pub fn write_records<W: Write>(w: W, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(headers)?;
    for row in rows {
        out.write_record(row)?;
    }
    Ok(out.flush()?)
}

pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| Error::Io(format!("bad number {c:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((headers, rows))
}

/// `(x, phi, u, backpointer)` rows of an inviscid snapshot. `u` is the
/// minimiser velocity, NaN before the first step.
pub fn inviscid_snapshot_rows(s: &SolutionField) -> Vec<Vec<f64>> {
    let u = s.velocity();
    (0..s.grid.n)
        .map(|i| {
            let (ui, bp) = match &u {
                Some(u) => (u[i], s.backpointers[i] as f64),
                None => (f64::NAN, f64::NAN),
            };
            vec![s.grid.x(i), s.phi_at(i), ui, bp]
        })
        .collect()
}

/// `(x, log_z, phi, u)` rows of a viscous snapshot.
pub fn viscous_snapshot_rows(z: &PartitionField, nu: f64, u: &[f64]) -> Vec<Vec<f64>> {
    let phi = z.phi(nu);
    (0..z.grid.n).map(|i| vec![z.grid.x(i), z.log_z_raw(i, nu), phi[i], u[i]]).collect()
}

pub const EXPONENT_HEADERS: [&str; 6] = ["name", "value", "stderr", "fit_lo", "fit_hi", "n_replicas"];

pub fn exponent_rows(est: &[ExponentEstimate]) -> Vec<Vec<String>> {
    est.iter()
        .map(|e| {
            vec![
                e.name.clone(),
                fmt_f64(e.value),
                fmt_f64(e.stderr),
                fmt_f64(e.fit_range.0),
                fmt_f64(e.fit_range.1),
                e.n_replicas.to_string(),
            ]
        })
        .collect()
}

/// Row-major little-endian `f64` column store; rows must share a length.
pub fn write_f64_columns<W: Write>(mut w: W, rows: &[Vec<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, Vec::len);
    let mut buf = Vec::with_capacity(rows.len() * width * 8);
    for (k, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(crate::error::validation(format!("row {k} has {} values, expected {width}", r.len())));
        }
        for v in r {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(w.write_all(&buf)?)
}

pub fn read_f64_columns(bytes: &[u8], width: usize) -> Result<Vec<Vec<f64>>> {
    if width == 0 || !bytes.len().is_multiple_of(8 * width) {
        return Err(crate::error::validation(format!("{} bytes do not hold rows of {width} floats", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8 * width)
        .map(|row| row.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        .collect())
}

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Symmetric error bars, drawn when present.
    pub err: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Straight line `y = intercept + slope x` in plotted coordinates over
    /// `[lo, hi]` (data units), e.g. a log-log fit.
    pub fit: Option<(f64, f64, f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Plot {
    pub fn loglog(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_x: true, log_y: true, ..Self::default() }
    }

    pub fn linear(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Self::default() }
    }

    pub fn with_series(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    /// Standalone SVG. The plotted numbers are repeated as CSV inside a
    /// leading comment so the file doubles as a data record.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 420.0, 60.0);
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.x.iter().zip(&s.y).map(|(&x, &y)| (tx(x), ty(y))))
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        let bound = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
            }
        };
        let (x0, x1) = bound(|p| p.0);
        let (y0, y1) = bound(|p| p.1);
        let px = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
        let py = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
        let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!--\nseries,x,y,err\n");
        for s in &self.series {
            for k in 0..s.x.len() {
                let e = s.err.as_ref().map_or(String::new(), |e| fmt_f64(e[k]));
                let _ = writeln!(out, "{},{},{},{}", s.label.replace(['\n', ','], " "), fmt_f64(s.x[k]), fmt_f64(s.y[k]), e);
            }
        }
        if let Some((a, b, lo, hi)) = self.fit {
            let _ = writeln!(out, "fit,intercept={},slope={},lo={},hi={}", fmt_f64(a), fmt_f64(b), fmt_f64(lo), fmt_f64(hi));
        }
        out.push_str("-->\n");
        let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">");
        let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let _ = writeln!(out, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", w / 2.0, esc(&self.title));
        let _ = writeln!(out, "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", w - 2.0 * m, h - 2.0 * m);
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let lx = if self.log_x { format!("1e{fx:.2}") } else { format!("{fx:.3}") };
            let ly = if self.log_y { format!("1e{fy:.2}") } else { format!("{fy:.3}") };
            let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{lx}</text>", px(fx), h - m + 16.0);
            let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{ly}</text>", m - 4.0, py(fy) + 4.0);
        }
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", w / 2.0, h - 16.0, esc(&self.x_label));
        let _ = writeln!(out, "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>", h / 2.0, h / 2.0, esc(&self.y_label));
        for (si, s) in self.series.iter().enumerate() {
            let c = COLORS[si % COLORS.len()];
            for k in 0..s.x.len() {
                let (x, y) = (tx(s.x[k]), ty(s.y[k]));
                if !(x.is_finite() && y.is_finite()) {
                    continue;
                }
                if let Some(e) = &s.err {
                    let (lo, hi) = (ty(s.y[k] - e[k]), ty(s.y[k] + e[k]));
                    let lo = if lo.is_finite() { lo } else { y0 };
                    let _ = writeln!(out, "<line x1=\"{0:.1}\" x2=\"{0:.1}\" y1=\"{1:.1}\" y2=\"{2:.1}\" stroke=\"{c}\"/>", px(x), py(lo), py(hi));
                }
                let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{c}\"/>", px(x), py(y));
            }
            let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>", m + 8.0, m + 16.0 + 14.0 * si as f64, esc(&s.label));
        }
        if let Some((a, b, lo, hi)) = self.fit {
            let (l, r) = (tx(lo), tx(hi));
            let _ = writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-dasharray=\"5,3\"/>",
                px(l),
                py(a + b * l),
                px(r),
                py(a + b * r)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
