//! `MBNN` parameter files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "MBNN" | version u32 | layer count u32
//! per layer: inputs u32 | outputs u32 | activation tag u32
//! per layer: weights f32[inputs * outputs] (row-major, inputs × outputs)
//!            biases  f32[outputs]
//! ```
//!
//! The SHA-256 of this byte image is the network's parameter digest.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::{Activation, DenseLayer, DenseNet};
use crate::error::{Error, Result};

pub const MBNN_MAGIC: &[u8; 4] = b"MBNN";
pub const MBNN_VERSION: u32 = 1;

const MAX_LAYERS: u32 = 1 << 10;
const MAX_WIDTH: u32 = 1 << 20;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("MBNN stream: {e}"))
}

pub fn write_net<W: Write>(net: &DenseNet<f32>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * net.param_count());
    buf.extend_from_slice(MBNN_MAGIC);
    buf.extend_from_slice(&MBNN_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        buf.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        buf.extend_from_slice(&l.activation.tag().to_le_bytes());
    }
    for l in net.layers() {
        for v in l.weight.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in l.bias.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(io_err)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads a network; the result is not frozen.
pub fn read_net<R: Read>(mut r: R) -> Result<DenseNet<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MBNN_MAGIC {
        return Err(Error::Format(format!("bad MBNN magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != MBNN_VERSION {
        return Err(Error::Format(format!("unsupported MBNN version {version}")));
    }
    let count = read_u32(&mut r)?;
    if count == 0 || count > MAX_LAYERS {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut dims = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let inputs = read_u32(&mut r)?;
        let outputs = read_u32(&mut r)?;
        let act = Activation::from_tag(read_u32(&mut r)?)?;
        if inputs == 0 || outputs == 0 || inputs > MAX_WIDTH || outputs > MAX_WIDTH {
            return Err(Error::Format(format!("implausible layer shape {inputs}x{outputs}")));
        }
        dims.push((inputs as usize, outputs as usize, act));
    }
    let mut layers = Vec::with_capacity(dims.len());
    for (inputs, outputs, activation) in dims {
        let weight = Array2::from_shape_vec((inputs, outputs), read_f32s(&mut r, inputs * outputs)?)
            .expect("length matches shape");
        let bias = Array1::from_vec(read_f32s(&mut r, outputs)?);
        layers.push(DenseLayer { weight, bias, activation });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err)? != 0 {
        return Err(Error::Format("trailing bytes after MBNN payload".into()));
    }
    DenseNet::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

impl DenseNet<f32> {
    pub fn to_mbnn_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_net(self, &mut buf).expect("writing to memory");
        buf
    }

    pub fn from_mbnn_bytes(bytes: &[u8]) -> Result<Self> {
        read_net(bytes)
    }

    /// SHA-256 of the `MBNN` byte image, hex encoded.
    pub fn digest(&self) -> String {
        digest_hex(&self.to_mbnn_bytes())
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
