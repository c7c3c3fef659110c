//! Trace and data-file input/output.
//!
//! Trace rows are flushed in small batches so an online run's progress is
//! visible on disk well before it finishes (every row reaches the file
//! within 500 rows of being produced). Floating-point values are written
//! with Rust's shortest round-trip formatting, which is deterministic, so
//! identical runs produce byte-identical files.

use crate::CliError;
use ovsmc::learn::StepRecord;
use ovsmc::series::Series;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const FLUSH_EVERY: usize = 500;

/// Incremental writer for `trace.csv`.
pub struct TraceWriter {
    out: BufWriter<File>,
    rows_since_flush: usize,
}

impl TraceWriter {
    pub fn create(path: &Path, param_names: &[String]) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        let mut header = String::from("t,incremental_elbo,ess");
        for name in param_names {
            header.push(',');
            header.push_str(name);
        }
        header.push_str(",lambda_norm\n");
        out.write_all(header.as_bytes()).map_err(CliError::io)?;
        Ok(TraceWriter {
            out,
            rows_since_flush: 0,
        })
    }

    pub fn write_record(&mut self, rec: &StepRecord) -> Result<(), CliError> {
        let mut row = format!("{},{},{}", rec.t, rec.incremental_elbo, rec.ess);
        for v in &rec.theta {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row.push(',');
        row.push_str(&rec.lambda_norm.to_string());
        row.push('\n');
        self.out.write_all(row.as_bytes()).map_err(CliError::io)?;
        self.rows_since_flush += 1;
        if self.rows_since_flush >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.out.flush().map_err(CliError::io)?;
        self.rows_since_flush = 0;
        Ok(())
    }
}

/// Write a series as CSV with a header (`prefix0..prefix{d-1}`), one row
/// per time index.
pub fn write_series(path: &Path, series: &Series, prefix: &str) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    let header: Vec<String> = (0..series.dim()).map(|i| format!("{prefix}{i}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(CliError::io)?;
    for row in series.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(CliError::io)?;
    }
    out.flush().map_err(CliError::io)
}

/// Read a CSV data file (header line, one vector per row).
pub fn read_series(path: &Path) -> Result<Series, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let dim = reader.headers().map_err(CliError::csv)?.len();
    if dim == 0 {
        return Err(CliError::Config(format!("{}: no columns", path.display())));
    }
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(CliError::csv)?;
        if record.len() != dim {
            return Err(CliError::Config(format!(
                "{}: row {} has {} fields, expected {dim}",
                path.display(),
                i + 2,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{}: row {}: {e}", path.display(), i + 2)))?;
            data.push(v);
        }
    }
    Series::new(data, dim).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let s = Series::new(vec![1.5, -2.0, 0.25, 3.0], 2).unwrap();
        write_series(&path, &s, "y").unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.as_slice(), s.as_slice());
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn rows_reach_disk_without_an_explicit_flush() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut w = TraceWriter::create(&path, &["p".into()]).unwrap();
        for t in 0..FLUSH_EVERY + 1 {
            w.write_record(&StepRecord {
                t,
                theta: vec![0.0],
                incremental_elbo: 0.0,
                ess: 1.0,
                lambda_norm: 0.0,
            })
            .unwrap();
        }
        // the auto-flush threshold has passed; the file must hold the rows
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() > FLUSH_EVERY);
    }

    #[test]
    fn trace_writer_produces_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut w = TraceWriter::create(&path, &["A".into(), "S_u".into()]).unwrap();
        w.write_record(&StepRecord {
            t: 1,
            theta: vec![0.5, 1.0],
            incremental_elbo: -1.25,
            ess: 0.75,
            lambda_norm: 2.0,
        })
        .unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "t,incremental_elbo,ess,A,S_u,lambda_norm\n1,-1.25,0.75,0.5,1,2\n"
        );
    }
}
