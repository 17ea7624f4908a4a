//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset | size | field                                      |
//! |--------|------|--------------------------------------------|
//! | 0      | 4    | magic `b"MCNN"`                            |
//! | 4      | 4    | u32 format version (currently 1)           |
//! | 8      | 1    | u8 activation: 0 = relu, 1 = tanh          |
//! | 9      | 3    | reserved, zero                             |
//! | 12     | 4    | u32 count of layer dims, L + 1             |
//! | 16     | 4·(L+1) | u32 layer dims, input first             |
//! | ..     | 8    | u64 parameter count P                      |
//! | ..     | 8·P  | f64 parameters: per layer, weights row-major `[out][in]`, then biases |
//!
//! Nothing may follow the parameter block.

use std::path::Path;

use super::mlp::{Activation, Dense, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MCNN";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &Mlp) -> Vec<u8> {
    let dims = net.layer_dims();
    let mut out = Vec::with_capacity(32 + 4 * dims.len() + 8 * net.num_params());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match net.activation() {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let activation = match r.take(1, "activation")?[0] {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(Error::CorruptCheckpoint(format!("unknown activation tag {other}"))),
    };
    r.take(3, "reserved")?;
    let n_dims = r.u32("layer count")? as usize;
    if n_dims < 2 || n_dims > 64 {
        return Err(Error::ShapeMismatch(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u32("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let declared = r.u64("parameter count")?;
    let implied: u64 = dims.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum();
    if declared != implied || dims.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "header dims {dims:?} imply {implied} parameters but {declared} are declared"
        )));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let weights = (0..inputs * outputs)
            .map(|_| r.f64("weights"))
            .collect::<Result<Vec<_>>>()?;
        let biases = (0..outputs).map(|_| r.f64("biases")).collect::<Result<Vec<_>>>()?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            biases,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after parameter block",
            bytes.len() - r.pos
        )));
    }
    Mlp::from_layers(activation, layers)
}

pub fn checkpoint_save(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks it has exactly the expected layer dims.
pub fn checkpoint_load_expecting(path: impl AsRef<Path>, layer_dims: &[usize]) -> Result<Mlp> {
    let net = checkpoint_load(path)?;
    if net.layer_dims() != layer_dims {
        return Err(Error::ShapeMismatch(format!(
            "expected layer dims {layer_dims:?}, checkpoint has {:?}",
            net.layer_dims()
        )));
    }
    Ok(net)
}
