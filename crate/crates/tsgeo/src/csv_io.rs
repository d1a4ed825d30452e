//! CSV ingestion and output.
//!
//! Input rules: an optional header row, an optional leading date/time column
//! (detected when its first data cell does not parse as a number), every
//! other column numeric. Columns become channels in file order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use tsgeo_core::TimeSeries;

use crate::error::{io_err, Error, Result};

fn numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

pub fn read_csv(path: &Path) -> Result<TimeSeries> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_csv(file, path)
}

/// Parses CSV from any reader; `path` only labels errors.
pub fn parse_csv(input: impl Read, path: &Path) -> Result<TimeSeries> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let err = |line: u64, msg: String| Error::Csv { path: path.to_path_buf(), line, msg };

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec));
    }
    let Some((first_line, first)) = records.first() else {
        return Err(err(0, "empty file".into()));
    };
    let width = first.len();
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(err(*line, format!("expected {width} fields, found {}", rec.len())));
        }
    }

    let header =
        if width == 1 { numeric(&first[0]).is_none() } else { first.iter().skip(1).any(|c| numeric(c).is_none()) };
    let body = &records[usize::from(header)..];
    let Some((_, probe)) = body.first() else {
        return Err(err(*first_line, "no data rows".into()));
    };
    let date_col = width > 1 && numeric(&probe[0]).is_none();
    let skip = usize::from(date_col);
    let channels = width - skip;
    if channels == 0 {
        return Err(err(*first_line, "no numeric columns".into()));
    }

    let mut data = Vec::with_capacity(body.len() * channels);
    for (line, rec) in body {
        for (col, cell) in rec.iter().enumerate().skip(skip) {
            match numeric(cell) {
                Some(v) if v.is_finite() => data.push(v),
                _ => return Err(err(*line, format!("column {}: non-numeric cell `{cell}`", col + 1))),
            }
        }
    }
    let series = TimeSeries::new(body.len(), channels, data)?;
    if header {
        let names = first.iter().skip(skip).map(str::to_owned).collect();
        return Ok(series.with_names(names)?);
    }
    Ok(series)
}

/// Writes a header and rows of preformatted cells.
pub fn write_rows<S: AsRef<str>>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let fail = |e: csv::Error| Error::Format { path: path.to_path_buf(), msg: e.to_string() };
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref)).map_err(fail)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes a series with one column per channel, named from the series or `ch<k>`.
pub fn write_series(path: &Path, series: &TimeSeries) -> Result<()> {
    let names: Vec<String> = match series.names() {
        Some(n) => n.to_vec(),
        None => (0..series.channels()).map(|k| format!("ch{k}")).collect(),
    };
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows =
        (0..series.len()).map(|t| (0..series.channels()).map(|c| series.get(t, c).to_string()).collect::<Vec<_>>());
    write_rows(path, &header, rows)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
