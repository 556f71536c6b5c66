//! Binary model files.
//!
//! Layout: magic `GLYFLSTM`, `u32` LE version, `u64` LE header length, JSON
//! [`ModelHeader`], then every parameter as an `f64` LE in flat order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count_for, LstmNetwork, Scaler};
use crate::error::{Error, Result};
use crate::pipeline::{decode_f64s, read_header_block};
use crate::scalar::Real;

pub const LSTM_MAGIC: &[u8; 8] = b"GLYFLSTM";
pub const LSTM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub hidden_size: usize,
    pub layers: usize,
    pub input_size: usize,
    pub scaler: Scaler<f64>,
    pub seed: u64,
    pub param_count: usize,
    /// Free-form description of how the model was trained.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn write_model<T: Real, W: Write>(mut w: W, net: &LstmNetwork<T>, provenance: &serde_json::Value) -> Result<()> {
    net.validate()?;
    let header = ModelHeader {
        hidden_size: net.hidden_size(),
        layers: net.layers.len(),
        input_size: 1,
        scaler: Scaler {
            lo: net.scaler.lo.as_f64(),
            hi: net.scaler.hi.as_f64(),
        },
        seed: net.seed,
        param_count: net.param_count(),
        provenance: provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let params = net.params();
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * params.len());
    buf.extend_from_slice(LSTM_MAGIC);
    buf.extend_from_slice(&LSTM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params {
        buf.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_model<T: Real>(bytes: &[u8]) -> Result<(LstmNetwork<T>, ModelHeader)> {
    let (json, payload) = read_header_block(bytes, LSTM_MAGIC, LSTM_VERSION)?;
    let header: ModelHeader = serde_json::from_slice(json)?;
    if header.input_size != 1 {
        return Err(Error::Shape(format!("unsupported input size {}", header.input_size)));
    }
    let expected = param_count_for(1, header.hidden_size, header.layers);
    if header.param_count != expected {
        return Err(Error::Shape(format!(
            "header declares {} parameters, architecture needs {expected}",
            header.param_count
        )));
    }
    let values = decode_f64s(payload, expected).map_err(|e| Error::Shape(e.to_string()))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("model contains non-finite parameters".into()));
    }
    let mut net = LstmNetwork::<T>::zeros(header.hidden_size, header.layers);
    net.set_params(&values.iter().map(|v| T::of(*v)).collect::<Vec<_>>())?;
    net.scaler = Scaler {
        lo: T::of(header.scaler.lo),
        hi: T::of(header.scaler.hi),
    };
    net.seed = header.seed;
    net.validate()?;
    Ok((net, header))
}

pub fn save_model<T: Real>(net: &LstmNetwork<T>, provenance: &serde_json::Value, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, net, provenance)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: &Path) -> Result<(LstmNetwork<T>, ModelHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut net = LstmNetwork::<f64>::new(8, 3, 99);
        net.scaler = Scaler { lo: 10.0, hi: 500.0 };
        let prov = serde_json::json!({"epochs": 3, "fold": 0});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&net, &prov, &path).unwrap();
        let (back, header) = load_model::<f64>(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.hidden_size, 8);
        assert_eq!(header.layers, 3);
        assert_eq!(header.param_count, 1513);
        assert_eq!(header.scaler, Scaler { lo: 10.0, hi: 500.0 });
        assert_eq!(header.provenance, prov);
        let input: Vec<f64> = (0..132).map(|t| 120.0 + t as f64 * 0.5).collect();
        assert_eq!(net.rollout(&input, 12, false).unwrap().0, back.rollout(&input, 12, false).unwrap().0);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len() - 20 - u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize, 1513 * 8);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = LstmNetwork::<f64>::new(4, 2, 1);
        let mut bytes = Vec::new();
        write_model(&mut bytes, &net, &serde_json::Value::Null).unwrap();
        let truncated = &bytes[..bytes.len() - 8];
        assert!(matches!(read_model::<f64>(truncated), Err(Error::Shape(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(matches!(read_model::<f64>(&extra), Err(Error::Shape(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_model::<f64>(&magic).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(read_model::<f64>(&version).is_err());
        assert!(read_model::<f64>(&bytes).is_ok());
    }
}
