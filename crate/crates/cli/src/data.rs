//! CSV input and output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use gpdflow::Matrix;

use crate::CliError;

/// Numeric table with named columns.
pub struct Table {
    pub headers: Vec<String>,
    pub data: Matrix,
}

fn data_err(msg: impl Into<String>) -> anyhow::Error {
    CliError::Data(msg.into()).into()
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| data_err(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn headers(rdr: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    let h = rdr
        .headers()
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(data_err(format!("{}: empty file or missing header", path.display())));
    }
    Ok(h)
}

/// Reads a CSV of finite numbers; the header row is required.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = open_reader(path)?;
    let headers = headers(&mut rdr, path)?;
    let d = headers.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != d {
            return Err(data_err(format!(
                "{}: line {line} has {} fields, header has {d}",
                path.display(),
                rec.len()
            )));
        }
        for (j, f) in rec.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                data_err(format!("{}: line {line}, column `{}`: `{f}` is not a number", path.display(), headers[j]))
            })?;
            if !v.is_finite() {
                return Err(data_err(format!(
                    "{}: line {line}, column `{}`: value is not finite",
                    path.display(),
                    headers[j]
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(data_err(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        headers,
        data: Matrix::from_vec(rows, d, values)?,
    })
}

/// Price table: a `date` column followed by asset columns. Cells are kept
/// as text so missing or malformed values can be reported by line.
pub struct PriceTable {
    pub assets: Vec<String>,
    pub dates: Vec<String>,
    pub prices: Vec<Vec<f64>>,
}

pub fn read_prices(path: &Path) -> Result<PriceTable> {
    let mut rdr = open_reader(path)?;
    let h = headers(&mut rdr, path)?;
    if h.len() < 2 {
        return Err(data_err(format!("{}: need a date column and at least one asset", path.display())));
    }
    let assets = h[1..].to_vec();
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(format!("{}: line {line}: {e}", path.display())))?;
        let date = rec.get(0).unwrap_or("").trim().to_string();
        let mut row = Vec::with_capacity(assets.len());
        let mut ok = !date.is_empty() && rec.len() == h.len();
        for k in 0..assets.len() {
            match rec.get(k + 1).map(str::trim).and_then(|f| f.parse::<f64>().ok()) {
                Some(v) if v.is_finite() => row.push(v),
                _ => ok = false,
            }
        }
        if ok {
            dates.push(date);
            prices.push(row);
        } else {
            bad.push(line);
        }
    }
    if !bad.is_empty() {
        let list: Vec<String> = bad.iter().take(20).map(|l| l.to_string()).collect();
        return Err(data_err(format!(
            "{}: missing date or price on line(s) {}{}",
            path.display(),
            list.join(", "),
            if bad.len() > 20 { ", ..." } else { "" }
        )));
    }
    if dates.is_empty() {
        return Err(data_err(format!("{}: no data rows", path.display())));
    }
    Ok(PriceTable { assets, dates, prices })
}

/// Destination for a primary output: a file, or stdout when unset.
pub fn sink(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            data_err(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn write_table<W: Write>(mut w: W, headers: &[String], data: &Matrix) -> Result<()> {
    writeln!(w, "{}", headers.join(","))?;
    for row in data.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn default_headers(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}
