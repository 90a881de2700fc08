//! Per-epoch metrics record and its CSV encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_acc,test_loss,test_acc,lr,t_backprop_s,t_sample_s,t_recal_s,t_total_s";

/// One epoch of training metrics. Test columns hold NaN on epochs where
/// evaluation was skipped by the eval cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub t_backprop_s: f64,
    pub t_sample_s: f64,
    pub t_recal_s: f64,
    pub t_total_s: f64,
}

impl MetricsRecord {
    fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.test_loss,
            self.test_acc,
            self.lr,
            self.t_backprop_s,
            self.t_sample_s,
            self.t_recal_s,
            self.t_total_s
        )
    }
}

/// Appends rows to `metrics.csv`, flushing after every epoch so an
/// aborted run keeps everything written so far.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", record.to_row())?;
        self.out.flush()?;
        Ok(())
    }
}

fn parse_field(value: &str, column: &str, line: usize) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| {
        Error::format(format!(
            "metrics line {line}: column '{column}' has unparsable value '{value}'"
        ))
    })
}

/// Reads a harness metrics file, checking the header and reporting the
/// line number of any malformed row.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("metrics file is empty"))??;
    let expected: Vec<&str> = METRICS_HEADER.split(',').collect();
    let got: Vec<&str> = header.trim().split(',').collect();
    for col in &expected {
        if !got.contains(col) {
            return Err(Error::format(format!("metrics header missing column '{col}'")));
        }
    }
    if got != expected {
        return Err(Error::format(format!(
            "metrics header mismatch: expected '{METRICS_HEADER}', got '{header}'"
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != expected.len() {
            return Err(Error::format(format!(
                "metrics line {lineno}: expected {} columns, got {}",
                expected.len(),
                parts.len()
            )));
        }
        let epoch = parts[0].trim().parse::<usize>().map_err(|_| {
            Error::format(format!(
                "metrics line {lineno}: column 'epoch' has unparsable value '{}'",
                parts[0]
            ))
        })?;
        records.push(MetricsRecord {
            epoch,
            train_loss: parse_field(parts[1], "train_loss", lineno)?,
            train_acc: parse_field(parts[2], "train_acc", lineno)?,
            test_loss: parse_field(parts[3], "test_loss", lineno)?,
            test_acc: parse_field(parts[4], "test_acc", lineno)?,
            lr: parse_field(parts[5], "lr", lineno)?,
            t_backprop_s: parse_field(parts[6], "t_backprop_s", lineno)?,
            t_sample_s: parse_field(parts[7], "t_sample_s", lineno)?,
            t_recal_s: parse_field(parts[8], "t_recal_s", lineno)?,
            t_total_s: parse_field(parts[9], "t_total_s", lineno)?,
        });
    }
    Ok(records)
}
