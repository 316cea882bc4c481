//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "IIBCKPT\n"
//! version    u32       1
//! nets       u32       number of networks
//!   per network:
//!     name     u32 length + UTF-8 bytes
//!     layers   u32
//!     input    u32       input dimension
//!     per layer: output u32, activation u8 (0 = identity, 1 = relu)
//! arrays     u32       number of named float arrays
//!   per array:
//!     name     u32 length + UTF-8 bytes
//!     rows     u32
//!     cols     u32
//! payload    f64 values: every network in order (per layer: weight row-major,
//!            then bias), followed by every array row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, DenseNet, Layer, Matrix};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IIBCKPT\n";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub networks: Vec<(String, DenseNet)>,
    pub arrays: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&DenseNet> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
    }

    pub fn array(&self, name: &str) -> Option<&Matrix> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.networks.len() as u32);
        for (name, net) in &self.networks {
            put_str(&mut out, name);
            put_u32(&mut out, net.layers().len() as u32);
            put_u32(&mut out, net.input_dim() as u32);
            for layer in net.layers() {
                put_u32(&mut out, layer.output_dim() as u32);
                out.push(layer.activation.code());
            }
        }
        put_u32(&mut out, self.arrays.len() as u32);
        for (name, m) in &self.arrays {
            put_str(&mut out, name);
            put_u32(&mut out, m.rows() as u32);
            put_u32(&mut out, m.cols() as u32);
        }
        for (_, net) in &self.networks {
            for layer in net.layers() {
                for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for (_, m) in &self.arrays {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let n_nets = r.u32()? as usize;
        let mut net_specs = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let name = r.string()?;
            let n_layers = r.u32()? as usize;
            let mut dims = vec![r.u32()? as usize];
            let mut acts = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                dims.push(r.u32()? as usize);
                let code = r.take(1)?[0];
                acts.push(Activation::from_code(code).ok_or_else(|| {
                    Error::format("checkpoint", format!("activation code {code}"))
                })?);
            }
            net_specs.push((name, dims, acts));
        }
        let n_arrays = r.u32()? as usize;
        let mut array_specs = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            array_specs.push((name, rows, cols));
        }

        let mut networks = Vec::with_capacity(n_nets);
        for (name, dims, acts) in net_specs {
            let mut layers = Vec::with_capacity(acts.len());
            for (w, act) in dims.windows(2).zip(acts) {
                let weight = Matrix::from_vec(w[1], w[0], r.floats(w[0] * w[1])?)?;
                let bias = r.floats(w[1])?;
                layers.push(Layer::new(weight, bias, act)?);
            }
            networks.push((name, DenseNet::from_layers(layers)?));
        }
        let mut arrays = Vec::with_capacity(n_arrays);
        for (name, rows, cols) in array_specs {
            arrays.push((name, Matrix::from_vec(rows, cols, r.floats(rows * cols)?)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { networks, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("checkpoint", "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
