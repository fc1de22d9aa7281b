//! Append-only CSV of per-epoch metrics.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["epoch", "split", "loss", "ter", "lr", "wall_s"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// `train` or `dev`.
    pub split: String,
    pub loss: f64,
    /// Not computed for the train split.
    pub token_error_rate: Option<f64>,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    fn record(&self) -> [String; 6] {
        [
            self.epoch.to_string(),
            self.split.clone(),
            format!("{:?}", self.loss),
            self.token_error_rate.map(|t| format!("{t:?}")).unwrap_or_default(),
            format!("{:?}", self.learning_rate),
            format!("{:?}", self.wall_seconds),
        ]
    }
}

/// Writes the header once, then one flushed row per call.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    last_epoch: usize,
}

impl MetricsWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(File::create(path)?)
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner, last_epoch: 0 })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if row.epoch < self.last_epoch {
            return Err(Error::Contract(format!(
                "metrics row for epoch {} after epoch {}",
                row.epoch, self.last_epoch
            )));
        }
        self.last_epoch = row.epoch;
        self.inner.write_record(row.record())?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Parse a metrics file written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let bad = |what: &str, v: &str| Error::Contract(format!("metrics: bad {what} `{v}`"));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(HEADER[i], field(i)));
        rows.push(MetricsRow {
            epoch: field(0).parse().map_err(|_| bad("epoch", field(0)))?,
            split: field(1).to_string(),
            loss: num(2)?,
            token_error_rate: if field(3).is_empty() { None } else { Some(num(3)?) },
            learning_rate: num(4)?,
            wall_seconds: num(5)?,
        });
    }
    Ok(rows)
}
