//! Parameter files: one JSON header line naming every tensor and its shape,
//! followed by the tensors' values as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use vcplan_numerics::Array;

use crate::error::{CoreError, Result};
use crate::planner::{Parameters, PlannerConfig};

pub const FORMAT: &str = "vcplan-params";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: PlannerConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(params: &Parameters, w: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.rows(), t.cols()],
            })
            .collect(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for t in &params.tensors {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint. With `expected`, tensors are checked against that
/// configuration instead of the one stored in the header.
pub fn read_checkpoint(
    r: &mut impl BufRead,
    expected: Option<&PlannerConfig>,
) -> Result<Parameters> {
    let bad = |m: String| CoreError::Checkpoint(m);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for entry in header.tensors {
        let [rows, cols] = entry.shape;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("truncated data in tensor `{}`", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        named.push((entry.name, Array::matrix(rows, cols, data)));
    }
    if r.read(&mut buf).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    let config = expected.unwrap_or(&header.config);
    Parameters::from_named(config, named)
}

pub fn save_checkpoint(params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(params, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CoreError::io(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&PlannerConfig>,
) -> Result<Parameters> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file), expected)
}
