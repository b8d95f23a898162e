//! CSV files: metrics streams and point sets.
//!
//! Numbers are written with 12 significant digits, period decimal separator
//! and LF line endings, independent of locale.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::tensor::Tensor;

pub const METRICS_HEADER: [&str; 13] = [
    "iter", "modes", "hq", "kl", "loss_d", "loss_g", "xi_1", "xi_2", "xi_3", "xi_4", "xi_5", "xi_6", "seconds",
];

/// `v` with 12 significant digits, in the style of C's `%.12g`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let fixed = format!("{v:.*}", (11 - exp) as usize);
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub fn metrics_record(r: &MetricsReport) -> Vec<String> {
    let mut row = vec![
        r.iteration.to_string(),
        r.modes.to_string(),
        fmt_num(r.hq),
        fmt_num(r.kl),
        fmt_num(r.loss_d),
        fmt_num(r.loss_g),
    ];
    row.extend(r.xi.iter().map(|&w| fmt_num(w)));
    row.push(fmt_num(r.seconds));
    row
}

/// Appends reports to a `metrics.csv`, flushing after every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = writer(path)?;
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    /// Continues an existing file, for resumed runs.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        let inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, r: &MetricsReport) -> Result<()> {
        self.inner.write_record(metrics_record(r))?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes an `[n, 2]` tensor with header `x,y`.
pub fn write_points(path: &Path, points: &Tensor) -> Result<()> {
    if points.rank() != 2 || points.cols() != 2 {
        return Err(Error::Shape(format!("points must be [n, 2], got {:?}", points.shape())));
    }
    let mut w = writer(path)?;
    w.write_record(["x", "y"])?;
    for row in points.data().chunks_exact(2) {
        w.write_record([fmt_num(row[0]), fmt_num(row[1])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(Error::Shape(format!("{} does not have an x,y header", path.display())));
    }
    let mut data = Vec::new();
    for record in r.records() {
        let record = record?;
        for field in record.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                Error::Shape(format!("{}: bad number `{field}`: {e}", path.display()))
            })?);
        }
    }
    Tensor::new(vec![data.len() / 2, 2], data)
}
