//! JSON-lines datasets: a header line, then one sample per line.

use crate::error::{CliError, Result};
use ifol_core::learning::Sample;
use ifol_core::sampling::SampleKind;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const FORMAT: &str = "ifol-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// Fingerprint of the mesh the fields live on.
    pub mesh: String,
    pub n_samples: usize,
    pub base_seed: u64,
    pub source: SampleKind,
}

pub fn write(path: &Path, header: &DatasetHeader, samples: &[Sample]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| CliError::io(path, e);
    serde_json::to_writer(&mut w, header).map_err(|e| CliError::io(path, e))?;
    w.write_all(b"\n").map_err(io)?;
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| CliError::io(path, e))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a dataset and checks it belongs to the mesh with `fingerprint`.
pub fn read(path: &Path, fingerprint: &str) -> Result<(DatasetHeader, Vec<Sample>)> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let bad = |line: usize, m: String| CliError::Config(format!("{}:{line}: {m}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "empty dataset file".into()))?
        .map_err(|e| CliError::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.format != FORMAT {
        return Err(bad(1, format!("format {:?} is not {FORMAT:?}", header.format)));
    }
    if header.mesh != fingerprint {
        return Err(bad(1, "dataset was generated on a different mesh".into()));
    }
    let mut samples = Vec::with_capacity(header.n_samples);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?);
    }
    if samples.len() != header.n_samples {
        return Err(bad(1, format!("header announces {} samples, file holds {}", header.n_samples, samples.len())));
    }
    Ok((header, samples))
}
