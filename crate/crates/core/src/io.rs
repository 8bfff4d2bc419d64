//! File formats: spectrum CSV, bispectral matrices, material and matrix JSON.
//!
//! Bispectral text format:
//!
//! ```text
//! BISPEC v1 <N> <lambda_min> <lambda_max>
//! <N rows, λo ascending; N whitespace-separated values per row, λi ascending>
//! ```
//!
//! Lines starting with `#` are comments. The CSV variant has a header row of
//! λi wavelengths (first cell ignored) and one row per λo, first cell the
//! wavelength.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::analytic::FluorescentMaterial;
use crate::error::{Error, Result};
use crate::reradiation::{LoadReport, SpectralReradMatrix};
use crate::spectral::{Spectrum, WavelengthGrid};

const BISPEC_MAGIC: &str = "BISPEC";
const BISPEC_VERSION: &str = "v1";

/// Numeric CSV table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Parses a numeric CSV table. A first record that does not parse as numbers
/// is taken as the header; `#` lines are skipped.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut header = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(idx + 1, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => {
                if let Some(first) = rows.first() {
                    if first.len() != values.len() {
                        return Err(Error::parse(
                            line,
                            format!("expected {} columns, found {}", first.len(), values.len()),
                        ));
                    }
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(line, "non-finite value"));
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && header.is_empty() => {
                header = record.iter().map(str::to_string).collect();
            }
            Err(e) => return Err(Error::parse(line, e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("table has no data rows".into()));
    }
    Ok(Table { header, rows })
}

/// Two-column `wavelength_nm,value` samples.
pub fn parse_spectrum_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let table = parse_table(text)?;
    if table.rows[0].len() != 2 {
        return Err(Error::parse(1, format!("expected 2 columns, found {}", table.rows[0].len())));
    }
    Ok(table.rows.iter().map(|r| (r[0], r[1])).collect())
}

/// Reads a spectrum CSV and resamples it onto `grid` (zero outside the table).
pub fn read_spectrum(path: &Path, grid: WavelengthGrid) -> Result<Spectrum> {
    Spectrum::resample(grid, &parse_spectrum_csv(&fs::read_to_string(path)?)?)
}

pub fn spectrum_to_csv(s: &Spectrum) -> String {
    let mut out = String::from("wavelength_nm,value\n");
    for (l, v) in s.grid().wavelengths().zip(s.values()) {
        let _ = writeln!(out, "{l},{v}");
    }
    out
}

pub fn bispec_to_string(m: &SpectralReradMatrix) -> String {
    let g = m.grid();
    let e = m.entries();
    let n = g.len();
    let mut out = format!("{BISPEC_MAGIC} {BISPEC_VERSION} {n} {} {}\n", g.min(), g.max());
    for o in 0..n {
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:e}", e[(o, i)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_bispec(text: &str) -> Result<(SpectralReradMatrix, LoadReport)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::Empty("bispectral file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != BISPEC_MAGIC {
        return Err(Error::parse(hline, "expected `BISPEC v1 N lambda_min lambda_max`"));
    }
    if fields[1] != BISPEC_VERSION {
        return Err(Error::parse(hline, format!("unsupported version `{}`", fields[1])));
    }
    let n: usize = fields[2].parse().map_err(|_| Error::parse(hline, "invalid N"))?;
    let lo: f64 = fields[3].parse().map_err(|_| Error::parse(hline, "invalid lambda_min"))?;
    let hi: f64 = fields[4].parse().map_err(|_| Error::parse(hline, "invalid lambda_max"))?;
    let grid = grid_from_count(n, lo, hi).map_err(|e| Error::parse(hline, e.to_string()))?;
    let mut entries = DMatrix::zeros(n, n);
    let mut row = 0;
    for (line, l) in lines {
        if row == n {
            return Err(Error::parse(line, format!("more than {n} data rows")));
        }
        let mut col = 0;
        for tok in l.split_whitespace() {
            if col == n {
                return Err(Error::parse(line, format!("more than {n} values")));
            }
            entries[(row, col)] = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("invalid number `{tok}`")))?;
            col += 1;
        }
        if col != n {
            return Err(Error::parse(line, format!("expected {n} values, found {col}")));
        }
        row += 1;
    }
    if row != n {
        return Err(Error::DimensionMismatch { expected: n, found: row });
    }
    SpectralReradMatrix::new(grid, entries)
}

pub fn bispec_to_csv(m: &SpectralReradMatrix) -> String {
    let g = m.grid();
    let mut out = String::from("lambda_o\\lambda_i");
    for l in g.wavelengths() {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (o, lo) in g.wavelengths().enumerate() {
        let _ = write!(out, "{lo}");
        for i in 0..g.len() {
            let _ = write!(out, ",{:e}", m.entries()[(o, i)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_bispec_csv(text: &str) -> Result<(SpectralReradMatrix, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let head = records
        .next()
        .ok_or_else(|| Error::Empty("bispectral CSV".into()))?
        .map_err(|e| Error::parse(1, e.to_string()))?;
    let lambda_i: Vec<f64> = head
        .iter()
        .skip(1)
        .map(|s| s.parse::<f64>().map_err(|_| Error::parse(1, format!("invalid wavelength `{s}`"))))
        .collect::<Result<_>>()?;
    let n = lambda_i.len();
    let mut lambda_o = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * n);
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(line, format!("invalid number `{s}`"))))
            .collect::<Result<_>>()?;
        lambda_o.push(nums[0]);
        values.extend_from_slice(&nums[1..]);
    }
    if lambda_o.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: lambda_o.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("bispectral CSV".into()));
    }
    let grid = grid_from_count(n, lambda_i[0], lambda_i[n - 1])?;
    for (k, (a, b)) in lambda_i.iter().zip(&lambda_o).enumerate() {
        let expect = grid.wavelength(k);
        if (a - expect).abs() > 1e-6 * grid.step() || (b - expect).abs() > 1e-6 * grid.step() {
            return Err(Error::InvalidGrid(format!(
                "wavelength axes must be identical and uniformly spaced (sample {k})"
            )));
        }
    }
    SpectralReradMatrix::new(grid, DMatrix::from_row_slice(n, n, &values))
}

/// Loads a bispectral matrix, choosing the format by extension (`.csv` or text).
pub fn read_bispec(path: &Path) -> Result<(SpectralReradMatrix, LoadReport)> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_bispec_csv(&text)
    } else {
        parse_bispec(&text)
    }
}

fn grid_from_count(n: usize, lo: f64, hi: f64) -> Result<WavelengthGrid> {
    if n < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 samples, got {n}")));
    }
    WavelengthGrid::new(lo, hi, (hi - lo) / (n - 1) as f64)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_material(path: &Path) -> Result<FluorescentMaterial> {
    let m: FluorescentMaterial = read_json(path)?;
    m.validate()?;
    Ok(m)
}
