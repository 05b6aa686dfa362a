//! Named tensor files in the safetensors layout: an 8-byte little-endian
//! header length, a JSON header mapping names to `{dtype, shape,
//! data_offsets}`, then the raw little-endian data. Only `F32` and `F64` are
//! supported.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: TensorData::F64(data),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self.data {
            TensorData::F32(_) => "F32",
            TensorData::F64(_) => "F64",
        }
    }

    fn append_le_bytes(&self, out: &mut Vec<u8>) {
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

pub fn encode_tensors(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut data = Vec::new();
    let mut header = serde_json::Map::new();
    for (name, t) in tensors {
        let start = data.len();
        t.append_le_bytes(&mut data);
        let entry = Entry {
            dtype: t.dtype().to_owned(),
            shape: t.shape.clone(),
            data_offsets: [start, data.len()],
        };
        header.insert(name.clone(), serde_json::to_value(entry).expect("entry serializes"));
    }
    let mut header = serde_json::to_vec(&header).expect("header serializes");
    while header.len() % 8 != 0 {
        header.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    out
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<BTreeMap<String, Tensor>, String> {
    if bytes.len() < 8 {
        return Err("file shorter than its header length field".into());
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or("header length exceeds file size")?;
    let header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..data_start]).map_err(|e| format!("bad header: {e}"))?;
    let data = &bytes[data_start..];
    let mut tensors = BTreeMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let entry: Entry =
            serde_json::from_value(value).map_err(|e| format!("tensor {name}: {e}"))?;
        let [start, end] = entry.data_offsets;
        if start > end || end > data.len() {
            return Err(format!("tensor {name}: offsets out of range"));
        }
        let raw = &data[start..end];
        let count: usize = entry.shape.iter().product();
        let tensor = match entry.dtype.as_str() {
            "F32" if raw.len() == count * 4 => Tensor::f32(
                entry.shape,
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            "F64" if raw.len() == count * 8 => Tensor::f64(
                entry.shape,
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            "F32" | "F64" => return Err(format!("tensor {name}: size does not match shape")),
            other => return Err(format!("tensor {name}: unsupported dtype {other}")),
        };
        tensors.insert(name, tensor);
    }
    Ok(tensors)
}

pub fn write_tensor_file(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes).map_err(|m| Error::decode(path, m))
}
