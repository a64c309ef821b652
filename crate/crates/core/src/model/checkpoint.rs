//! Weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "N2FCKPT\0"
//! version      u32
//! seed         u64
//! in_channels  u32
//! layer_count  u32
//! per layer:   out_ch u32, in_ch u32, kernel u32, activation u8 (0 relu, 1 identity)
//! per layer:   weights as f32 (out, in, k, k order), then bias as f32
//! ```
//!
//! Optimizer state is not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvLayer, Real, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"N2FCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_dim(r: &mut impl Read) -> Result<usize> {
    let v = read_u32(r)? as usize;
    if v == 0 || v > 1 << 16 {
        return Err(bad(format!("implausible layer dimension {v}")));
    }
    Ok(v)
}

impl<T: Real> Network<T> {
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.in_channels as u32).to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            for d in [l.out_channels(), l.in_channels(), l.kernel_size()] {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let tag: u8 = match l.activation() {
                Activation::Relu => 0,
                Activation::Identity => 1,
            };
            w.write_all(&[tag])?;
        }
        for l in &self.layers {
            for &v in l.weights().data().iter().chain(l.bias()) {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        if read_array::<8>(&mut r)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let in_channels = read_dim(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        if count == 0 || count > 1024 {
            return Err(bad(format!("implausible layer count {count}")));
        }
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let (cout, cin, k) = (read_dim(&mut r)?, read_dim(&mut r)?, read_dim(&mut r)?);
            let act = match read_array::<1>(&mut r)?[0] {
                0 => Activation::Relu,
                1 => Activation::Identity,
                t => return Err(bad(format!("unknown activation tag {t}"))),
            };
            specs.push((cout, cin, k, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (cout, cin, k, act) in specs {
            let mut read_f32 = || -> Result<T> { Ok(T::from_f64(f32::from_le_bytes(read_array(&mut r)?) as f64)) };
            let mut wdata = Vec::with_capacity(cout * cin * k * k);
            for _ in 0..cout * cin * k * k {
                wdata.push(read_f32()?);
            }
            let bias = (0..cout).map(|_| read_f32()).collect::<Result<Vec<_>>>()?;
            layers.push(ConvLayer::new(Tensor::new([cout, cin, k, k], wdata)?, bias, act)?);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes after checkpoint data"));
        }
        let net = Network::from_layers(layers, seed)?;
        if net.in_channels != in_channels {
            return Err(bad("header input channels disagree with the first layer"));
        }
        Ok(net)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
