use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{DgirError, Result};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DgirError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| DgirError::io(path, e))
}

/// Binary 8-bit PGM of values in `[0, 1]`, row-major `[height, width]`.
pub fn write_pgm(path: &Path, shape: [usize; 2], values: &[f64]) -> Result<()> {
    if values.len() != shape[0] * shape[1] {
        return Err(DgirError::Shape(format!("{} values for a {shape:?} image", values.len())));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", shape[1], shape[0]).into_bytes();
    bytes.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_file(path, &bytes)
}

/// Rows of a metrics table sharing the schema
/// `value,seed,dice_mean,dice_1..dice_k,pct_neg_jac,epe`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub value: String,
    pub seed: u64,
    pub dice_mean: f64,
    pub dice_per_structure: Vec<f64>,
    pub pct_neg_jac: f64,
    pub epe: f64,
}

pub fn metrics_csv(rows: &[CsvRow]) -> String {
    let k = rows.iter().map(|r| r.dice_per_structure.len()).max().unwrap_or(0);
    let mut out = String::from("value,seed,dice_mean");
    for i in 1..=k {
        let _ = write!(out, ",dice_{i}");
    }
    out.push_str(",pct_neg_jac,epe\n");
    for r in rows {
        let _ = write!(out, "{},{},{:.6}", r.value, r.seed, r.dice_mean);
        for i in 0..k {
            match r.dice_per_structure.get(i) {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.6},{:.6}", r.pct_neg_jac, r.epe);
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    write_file(path, metrics_csv(rows).as_bytes())
}

/// Line plot of `(x label, y)` points with categorical x positions.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(String, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 56.0);
    let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if points.is_empty() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.05, hi + 0.05)
    } else {
        (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo))
    };
    let n = points.len().max(1);
    let px = |i: usize| m + (w - 2.0 * m) * if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    let py = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, m - 6.0, py(v) + 4.0);
    }
    let path: Vec<String> = points.iter().enumerate().map(|(i, p)| format!("{:.1},{:.1}", px(i), py(p.1))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" "));
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="steelblue"/>"#, px(i), py(p.1));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(i), h - m + 16.0, p.0);
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    write_file(path, svg.as_bytes())
}
