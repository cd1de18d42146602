//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   u32 = 0x53_50_4E_31 ("SPN1")
//! version u32 = 1
//! input_shape: rank u32, then each dim u32
//! layer count u32, then per layer:
//!   tag u8: 0 dense | 1 conv2d | 2 maxpool | 3 relu | 4 flatten
//!   dense:   in u32, out u32, weights f64*, bias f64*, mask u8*
//!   conv2d:  out_ch u32, in_ch u32, kernel u32, stride u32,
//!            weights f64*, bias f64*, mask u8*
//!   maxpool: window u32, stride u32
//! train-config flag u8 (0 absent, 1 present), then if present:
//!   iterations u64, batch_size u64, base_lr f64, momentum f64,
//!   lr_gamma f64, lr_power f64, seed u64, activation_l1_lambda f64
//! ```
//!
//! Weights are stored as raw IEEE-754 bit patterns, so a load of a save is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Layer, Network, TrainConfig};

const MAGIC: u32 = 0x5350_4E31;
const VERSION: u32 = 1;

/// Saves a network (and optionally the config that trained it) to `path`.
pub fn save_checkpoint(net: &Network, cfg: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC.to_le_bytes())?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_u32(&mut w, net.input_shape().len() as u32)?;
    for &d in net.input_shape() {
        write_u32(&mut w, d as u32)?;
    }
    write_u32(&mut w, net.layers().len() as u32)?;
    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, bias, mask } => {
                w.write_all(&[0u8])?;
                write_u32(&mut w, weight.shape()[0] as u32)?;
                write_u32(&mut w, weight.shape()[1] as u32)?;
                write_f64s(&mut w, weight.data())?;
                write_f64s(&mut w, bias.data())?;
                write_mask(&mut w, mask.data())?;
            }
            Layer::Conv2d {
                weight,
                bias,
                mask,
                stride,
            } => {
                w.write_all(&[1u8])?;
                for &d in weight.shape() {
                    write_u32(&mut w, d as u32)?;
                }
                write_u32(&mut w, *stride as u32)?;
                write_f64s(&mut w, weight.data())?;
                write_f64s(&mut w, bias.data())?;
                write_mask(&mut w, mask.data())?;
            }
            Layer::MaxPool { window, stride } => {
                w.write_all(&[2u8])?;
                write_u32(&mut w, *window as u32)?;
                write_u32(&mut w, *stride as u32)?;
            }
            Layer::Relu => w.write_all(&[3u8])?,
            Layer::Flatten => w.write_all(&[4u8])?,
        }
    }
    match cfg {
        Some(cfg) => {
            w.write_all(&[1u8])?;
            w.write_all(&(cfg.iterations as u64).to_le_bytes())?;
            w.write_all(&(cfg.batch_size as u64).to_le_bytes())?;
            w.write_all(&cfg.base_lr.to_le_bytes())?;
            w.write_all(&cfg.momentum.to_le_bytes())?;
            w.write_all(&cfg.lr_gamma.to_le_bytes())?;
            w.write_all(&cfg.lr_power.to_le_bytes())?;
            w.write_all(&cfg.seed.to_le_bytes())?;
            w.write_all(&cfg.activation_l1_lambda.to_le_bytes())?;
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Network, Option<TrainConfig>)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32(&mut r)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "checkpoint",
            expected: MAGIC,
            found: magic,
        });
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::DataConsistency(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let rank = read_u32(&mut r)? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(read_u32(&mut r)? as usize);
    }
    let layer_count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let layer = match tag[0] {
            0 => {
                let in_dim = read_u32(&mut r)? as usize;
                let out_dim = read_u32(&mut r)? as usize;
                let weight = Tensor::new(vec![in_dim, out_dim], read_f64s(&mut r, in_dim * out_dim)?)?;
                let bias = Tensor::new(vec![out_dim], read_f64s(&mut r, out_dim)?)?;
                let mask = read_mask(&mut r, vec![in_dim, out_dim])?;
                Layer::Dense { weight, bias, mask }
            }
            1 => {
                let out_ch = read_u32(&mut r)? as usize;
                let in_ch = read_u32(&mut r)? as usize;
                let k1 = read_u32(&mut r)? as usize;
                let k2 = read_u32(&mut r)? as usize;
                let stride = read_u32(&mut r)? as usize;
                let count = out_ch * in_ch * k1 * k2;
                let weight = Tensor::new(vec![out_ch, in_ch, k1, k2], read_f64s(&mut r, count)?)?;
                let bias = Tensor::new(vec![out_ch], read_f64s(&mut r, out_ch)?)?;
                let mask = read_mask(&mut r, vec![out_ch, in_ch, k1, k2])?;
                Layer::Conv2d {
                    weight,
                    bias,
                    mask,
                    stride,
                }
            }
            2 => Layer::MaxPool {
                window: read_u32(&mut r)? as usize,
                stride: read_u32(&mut r)? as usize,
            },
            3 => Layer::Relu,
            4 => Layer::Flatten,
            other => {
                return Err(Error::DataConsistency(format!(
                    "unknown layer tag {other} in checkpoint"
                )))
            }
        };
        layers.push(layer);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let cfg = if flag[0] == 1 {
        Some(TrainConfig {
            iterations: read_u64(&mut r)? as usize,
            batch_size: read_u64(&mut r)? as usize,
            base_lr: read_f64(&mut r)?,
            momentum: read_f64(&mut r)?,
            lr_gamma: read_f64(&mut r)?,
            lr_power: read_f64(&mut r)?,
            seed: read_u64(&mut r)?,
            activation_l1_lambda: read_f64(&mut r)?,
        })
    } else {
        None
    };
    let net = Network::new(input_shape, layers)?;
    Ok((net, cfg))
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_mask(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = vs.iter().map(|&m| if m != 0.0 { 1u8 } else { 0u8 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_mask(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor> {
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count];
    r.read_exact(&mut bytes)?;
    Tensor::new(shape, bytes.iter().map(|&b| f64::from(b)).collect())
}
