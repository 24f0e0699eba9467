//! Artifact readers and writers: CSV tables, ASCII PGM images, JSON.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::Histogram;
use crate::optim::IterRecord;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes a header row followed by numeric rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format_num(*v)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation.
fn format_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str) -> Result<f64> {
    match s.trim() {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| Error::Input(format!("not a number: {t:?}"))),
    }
}

/// Reads a table written by [`write_table`]: `(header, rows)`.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(parse_num).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, rows))
}

/// `trajectory_<method>.csv`: iteration, dc, mse or nll, nrmse, psnr.
pub fn write_trajectory(path: &Path, records: &[IterRecord], poisson: bool) -> Result<()> {
    let middle = if poisson { "nll" } else { "mse" };
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            vec![
                r.iteration as f64,
                r.dc,
                if poisson { r.nll } else { r.mse },
                r.nrmse,
                r.psnr,
            ]
        })
        .collect();
    write_table(path, &["iteration", "dc", middle, "nrmse", "psnr"], &rows)
}

/// `hist_<case>.csv`: bin_lo, bin_hi, count.
pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let rows: Vec<Vec<f64>> = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| vec![h.edges[i], h.edges[i + 1], c as f64])
        .collect();
    write_table(path, &["bin_lo", "bin_hi", "count"], &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Flat single-column CSV with a `value` header.
pub fn write_flat_csv(path: &Path, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    write_table(path, &["value"], &rows)
}

pub fn read_flat_csv(path: &Path) -> Result<Vec<f64>> {
    let (_, rows) = read_table(path)?;
    rows.into_iter()
        .map(|r| {
            r.first()
                .copied()
                .ok_or_else(|| Error::Input("empty CSV row".into()))
        })
        .collect()
}

pub const PGM_MAXVAL: u32 = 65535;

/// ASCII PGM (P2), 16-bit. Values are clamped at zero and scaled so the
/// image maximum maps to 65535; the scale factor is recorded in a comment.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if width * height != values.len() {
        return Err(Error::Input("PGM dimensions do not match the data".into()));
    }
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { PGM_MAXVAL as f64 / peak } else { 0.0 };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "# scale {scale}")?;
    writeln!(w, "{width} {height}")?;
    writeln!(w, "{PGM_MAXVAL}")?;
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.max(0.0) * scale).round() as u32).to_string())
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an ASCII PGM; returns `(width, height, values / maxval)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    let bad = |m: &str| Error::Input(format!("malformed PGM: {m}"));
    let mut it = tokens.into_iter();
    if it.next().as_deref() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut next_num = |what: &str| -> Result<usize> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(what))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let maxval = next_num("maxval")?;
    if maxval == 0 {
        return Err(bad("zero maxval"));
    }
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        values.push(next_num("pixel")? as f64 / maxval as f64);
    }
    Ok((width, height, values))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}
