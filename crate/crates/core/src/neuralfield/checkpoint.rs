use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Layer, Real, SirenConfig, SirenNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: SirenConfig,
    layer_shapes: Vec<[usize; 2]>,
    dtype: String,
}

impl<T: Real> SirenNet<T> {
    /// "SRNC", u32 version, u32 header length, JSON header, then each layer's
    /// weights (row-major) and bias as little-endian values.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            layer_shapes: self.config.layer_shapes(),
            dtype: T::DTYPE.to_string(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + T::BYTES * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.flat_params() {
            v.write_le(&mut out);
        }
        Ok(out)
    }

    /// Parses a checkpoint. Values stored at another precision are converted.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::CorruptHeader("not an SRNC checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CorruptHeader(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let start = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::CorruptHeader("header length exceeds file size".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..start])
            .map_err(|e| Error::CorruptHeader(format!("invalid JSON header: {e}")))?;
        header.config.validate()?;
        if header.layer_shapes != header.config.layer_shapes() {
            return Err(Error::CorruptHeader(
                "layer shapes disagree with config".into(),
            ));
        }
        let values: Vec<f64> = match header.dtype.as_str() {
            "f32" => decode::<f32>(&bytes[start..])?,
            "f64" => decode::<f64>(&bytes[start..])?,
            other => return Err(Error::UnknownDtype(other.to_string())),
        };
        let expected = header.config.param_count();
        if values.len() != expected {
            return Err(Error::PayloadMismatch {
                expected,
                actual: values.len(),
            });
        }
        let mut it = values.into_iter().map(|v| T::from_f64(v).unwrap());
        let layers = header
            .layer_shapes
            .iter()
            .map(|&[o, i]| {
                let weight =
                    Array2::from_shape_vec((o, i), it.by_ref().take(o * i).collect()).unwrap();
                let bias = Array1::from_iter(it.by_ref().take(o));
                Layer { weight, bias }
            })
            .collect();
        SirenNet::from_layers(header.config, layers)
    }
}

fn decode<U: Real>(payload: &[u8]) -> Result<Vec<f64>> {
    if !payload.len().is_multiple_of(U::BYTES) {
        return Err(Error::CorruptHeader(
            "payload is not a whole number of values".into(),
        ));
    }
    Ok(payload
        .chunks_exact(U::BYTES)
        .map(|c| U::read_le(c).to_f64().unwrap())
        .collect())
}

pub fn write_checkpoint<T: Real>(net: &SirenNet<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, net.to_checkpoint_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SirenNet<T>> {
    SirenNet::from_checkpoint_bytes(&fs::read(path)?)
}
