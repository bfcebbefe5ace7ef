//! Parameter checkpoint files: one JSON header line, then the parameters as
//! little-endian `f64` in layer order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, Activation, Approximator};
use crate::error::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub role: String,
    pub rng_seed: u64,
    pub n_values: usize,
}

/// Writes `values` under `header` (used both for networks and optimizer moments).
fn write_raw(path: &Path, header: &ParamsHeader, values: &[f64]) -> Result<()> {
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_raw(path: &Path) -> Result<(ParamsHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing header line".into(),
    })?;
    let header: ParamsHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format_version != PARAMS_FORMAT_VERSION {
        return Err(Error::Schema {
            line: 1,
            msg: format!("unsupported format version {}", header.format_version),
        });
    }
    let body = &bytes[nl + 1..];
    if body.len() != header.n_values * 8 {
        return Err(Error::Schema {
            line: 2,
            msg: format!("expected {} values, found {} bytes", header.n_values, body.len()),
        });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_params_file(path: &Path, net: &Approximator, role: &str) -> Result<()> {
    write_vector_file(path, net, role, net.params())
}

/// Writes an arbitrary parameter-aligned vector (e.g. optimizer moments)
/// using the network's header.
pub fn write_vector_file(path: &Path, net: &Approximator, role: &str, values: &[f64]) -> Result<()> {
    let header = ParamsHeader {
        format_version: PARAMS_FORMAT_VERSION,
        layer_dims: net.layer_dims().to_vec(),
        activation: net.activation(),
        role: role.to_string(),
        rng_seed: net.rng_seed(),
        n_values: values.len(),
    };
    write_raw(path, &header, values)
}

pub fn read_params_file(path: &Path) -> Result<(ParamsHeader, Approximator)> {
    let (header, values) = read_raw(path)?;
    if values.len() != param_count(&header.layer_dims) {
        return Err(Error::Schema {
            line: 1,
            msg: "parameter count does not match layer_dims".into(),
        });
    }
    let net = Approximator::from_params(&header.layer_dims, header.activation, values, header.rng_seed)?;
    Ok((header, net))
}

pub fn read_vector_file(path: &Path) -> Result<(ParamsHeader, Vec<f64>)> {
    read_raw(path)
}
