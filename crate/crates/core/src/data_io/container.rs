//! `.tct` tensor container.
//!
//! ```text
//! "TCT1" | dtype u8 (0=f32, 1=f64, 2=u8) | ndim u8 | dims: ndim × u32 LE | payload LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FrameTensor;

pub const MAGIC: [u8; 4] = *b"TCT1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dtype_size(code: u8) -> Result<usize> {
    match code {
        0 => Ok(4),
        1 => Ok(8),
        2 => Ok(1),
        c => Err(Error::UnsupportedDtype(c)),
    }
}

/// A dense n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::shape(format!("{} dimensions exceed the container limit", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::shape("dimension exceeds u32"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("dims {dims:?} hold {n} values, data has {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_frame(t: &FrameTensor) -> Self {
        let (h, w, c) = t.shape();
        Self { dims: vec![h, w, c], data: TensorData::F32(t.data().to_vec()) }
    }

    /// Interprets an `H×W×C` (or `H×W`, as one channel) f32 tensor as a frame.
    pub fn to_frame(&self) -> Result<FrameTensor> {
        let (h, w, c) = match self.dims[..] {
            [h, w] => (h, w, 1),
            [h, w, c] => (h, w, c),
            _ => return Err(Error::shape(format!("expected H×W×C, got {:?}", self.dims))),
        };
        match &self.data {
            TensorData::F32(v) => FrameTensor::from_vec(h, w, c, v.clone()),
            TensorData::F64(v) => FrameTensor::from_vec(h, w, c, v.iter().map(|&x| x as f32).collect()),
            TensorData::U8(_) => Err(Error::UnsupportedDtype(2)),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let esize = dtype_size(self.data.dtype_code()).expect("known dtype");
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + esize * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.data.dtype_code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header_err = |need: usize| Error::TruncatedPayload { expected: need, found: bytes.len() };
        if bytes.len() < 4 {
            return Err(header_err(6));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < 6 {
            return Err(header_err(6));
        }
        let dtype = bytes[4];
        let esize = dtype_size(dtype)?;
        let ndim = bytes[5] as usize;
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(header_err(header));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != n * esize {
            return Err(Error::TruncatedPayload { expected: n * esize, found: payload.len() });
        }
        let data = match dtype {
            0 => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}
