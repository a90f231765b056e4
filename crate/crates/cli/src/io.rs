//! CSV time-series files: a `t,ch1,ch2,...` header, time in seconds in the
//! first column, one column per channel. Floats are written with 17
//! significant digits so a write/read cycle is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use siva::signal::TimeSeries;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Relative spacing error tolerated between consecutive time stamps.
const SPACING_TOL: f64 = 1e-6;

pub fn read_series(path: &Path) -> Result<TimeSeries, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || header.get(0).map(str::trim) != Some("t") {
        return Err(format_err(path, "header must be `t,ch1,...`"));
    }
    let channels = header.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {}: `{field}` is not a number", line + 2)))?;
            if !v.is_finite() {
                return Err(format_err(path, format!("row {}: non-finite value", line + 2)));
            }
            if c == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = times.len();
    if n < 2 {
        return Err(format_err(path, "need at least two samples"));
    }
    let span = times[n - 1] - times[0];
    if span <= 0.0 {
        return Err(format_err(path, "time column must increase"));
    }
    let dt = span / (n - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > SPACING_TOL * dt {
            return Err(format_err(path, format!("non-uniform sampling at row {}", i + 3)));
        }
    }
    let mut rate = (n - 1) as f64 / span;
    if (rate - rate.round()).abs() < SPACING_TOL * rate {
        rate = rate.round();
    }
    let channels = Array2::from_shape_vec((n, channels), values).map_err(|e| format_err(path, e.to_string()))?;
    TimeSeries::new(rate, times[0], channels).map_err(|e| format_err(path, e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `header` then one line per row, every value as `{:.16e}`.
pub fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let io_err = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn channel_header(count: usize) -> Vec<String> {
    std::iter::once("t".to_owned()).chain((1..=count).map(|c| format!("ch{c}"))).collect()
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<(), IoError> {
    let rows = (0..series.len()).map(|i| {
        let mut row = vec![series.time(i)];
        row.extend(series.channels.row(i).iter());
        row
    });
    write_table(path, &channel_header(series.channel_count()), rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let io_err = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e.to_string()))?;
    writeln!(w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let ch = Array2::from_shape_fn((101, 2), |(i, c)| (i as f64 * 0.1 + c as f64).sin() / 3.0);
        let s = TimeSeries::new(10_000.0, 0.0, ch).unwrap();
        write_series(&path, &s).unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.sample_rate, 10_000.0);
        assert_eq!(back.channels, s.channels);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,ch1,ch2\n"));
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = |body: &str| {
            let p = dir.path().join("b.csv");
            std::fs::write(&p, body).unwrap();
            read_series(&p)
        };
        assert!(bad("x,ch1\n0,1\n1,2\n").is_err());
        assert!(bad("t,ch1\n0,1\n").is_err());
        assert!(bad("t,ch1\n0,1\n1,2\n3,4\n").is_err());
        assert!(bad("t,ch1\n0,1\n1,abc\n").is_err());
        assert!(bad("t,ch1\n0,1\n1,2\n2,3\n").is_ok());
        assert!(read_series(&dir.path().join("missing.csv")).is_err());
    }
}
