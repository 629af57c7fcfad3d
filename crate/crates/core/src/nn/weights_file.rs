//! Weights file: one JSON header line listing `(name, shape, offset)` per
//! tensor, then the raw little-endian values concatenated in header order.
//! Offsets are relative to the first byte after the header's newline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, Parameters, Tensor};
use crate::scalar::Scalar;

const FORMAT: &str = "hcr-weights";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn encode_weights<T: Scalar>(params: &Parameters<T>) -> Vec<u8> {
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(Entry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len() * T::WIDTH;
    }
    let header = Header { format: FORMAT.into(), version: 1, dtype: T::DTYPE.into(), tensors };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(offset);
    for (_, t) in params.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<Parameters<T>, NnError> {
    let bad = |msg: String| NnError::WeightsFormat(msg);
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.dtype != T::DTYPE {
        return Err(bad(format!("file holds {} values, reader expects {}", header.dtype, T::DTYPE)));
    }
    let data = &bytes[newline + 1..];
    let mut expected_offset = 0;
    let mut entries = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.offset != expected_offset {
            return Err(bad(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
        }
        let count: usize = e.shape.iter().product();
        let end = e.offset + count * T::WIDTH;
        if end > data.len() {
            return Err(bad(format!("tensor {} truncated", e.name)));
        }
        let values = data[e.offset..end].chunks_exact(T::WIDTH).map(T::read_le).collect();
        entries.push((e.name, Tensor::new(e.shape, values)?));
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(bad(format!("{} trailing bytes", data.len() - expected_offset)));
    }
    Ok(Parameters::from_entries(entries))
}

pub fn save_weights<T: Scalar>(params: &Parameters<T>, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode_weights(params)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<Parameters<T>, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use proptest::prelude::*;

    #[test]
    fn header_lists_offsets_in_order() {
        let spec = NetworkSpec::tabular(3, 2);
        let params = Parameters::<f32>::init(&spec, 0).unwrap();
        let bytes = encode_weights(&params);
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..newline]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "dense0.weight");
        assert_eq!(header["tensors"][1]["offset"], 24);
        assert_eq!(bytes.len() - newline - 1, (6 + 2) * 4);
    }

    #[test]
    fn truncated_and_mistyped_files_are_rejected() {
        let spec = NetworkSpec::tabular(3, 2);
        let params = Parameters::<f32>::init(&spec, 0).unwrap();
        let bytes = encode_weights(&params);
        assert!(decode_weights::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_weights::<f64>(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), bits in prop::collection::vec(any::<u32>(), 8)) {
            let spec = NetworkSpec::tabular(3, 2);
            let mut params = Parameters::<f32>::init(&spec, seed).unwrap();
            // arbitrary finite bit patterns, including negative zero and subnormals
            for (v, b) in params.get_mut("dense0.weight").unwrap().data_mut().iter_mut().zip(&bits) {
                let f = f32::from_bits(*b);
                if f.is_finite() { *v = f; }
            }
            let decoded: Parameters<f32> = decode_weights(&encode_weights(&params)).unwrap();
            for ((na, a), (nb, b)) in params.iter().zip(decoded.iter()) {
                prop_assert_eq!(na, nb);
                let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
