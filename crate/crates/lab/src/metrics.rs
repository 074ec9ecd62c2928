//! Metrics CSV with a fixed header.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const HEADER: &str = "run_id,epoch,lambda_n,lambda_th,ca_percent,ra_percent,attack_name,density,slim_factor,params,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epoch: usize,
    pub lambda_n: f64,
    pub lambda_th: f64,
    pub ca_percent: f64,
    pub ra_percent: f64,
    pub attack_name: String,
    pub density: f64,
    pub slim_factor: f64,
    pub params: u64,
    pub wall_ms: u64,
}

/// Append-only writer; creating one truncates the file and writes the header.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| LabError::io(&path, e))?;
        writeln!(file, "{HEADER}").map_err(|e| LabError::io(&path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { path, inner })
    }

    pub fn append(&mut self, rows: &[MetricsRecord]) -> Result<()> {
        for r in rows {
            self.inner.serialize(r).map_err(|e| LabError::io(&self.path, e.into()))?;
        }
        self.inner.flush().map_err(|e| LabError::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::io(path, e.into()))?;
    let header = r.headers().map_err(|e| LabError::io(path, e.into()))?.iter().collect::<Vec<_>>().join(",");
    if header != HEADER {
        return Err(LabError::Config(format!("{} has header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| LabError::io(path, e.into()))).collect()
}
