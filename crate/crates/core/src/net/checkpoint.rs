//! Binary checkpoint: all integers and floats little-endian.
//!
//! ```text
//! magic        4 bytes   "LSIM"
//! version      u32       1
//! n, m         u32, u32  state and latent dimension
//! layers       u32       coupling layers
//! width        u32       hidden units per subnet layer
//! depth        u32       hidden layers per subnet
//! clamp        f64       log-scale bound
//! param_count  u64
//! params       param_count × f64, in `PseudoInvertibleNet::params` order
//! ```

use std::fs;
use std::path::Path;

use super::{NetConfig, PseudoInvertibleNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSIM";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4 + 8 + 8;

pub fn to_bytes(net: &PseudoInvertibleNet) -> Vec<u8> {
    let cfg = net.config();
    let params = net.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.n, cfg.m, cfg.layers, cfg.width, cfg.depth] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.clamp.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<PseudoInvertibleNet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..5).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let clamp = f64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(bytes[36..44].try_into().expect("8 bytes"));
    let cfg = NetConfig { n: dims[0], m: dims[1], layers: dims[2], width: dims[3], depth: dims[4], clamp };
    if cfg.m <= cfg.n {
        return Err(Error::Format(format!("latent dimension {} not larger than state dimension {}", cfg.m, cfg.n)));
    }
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
    if count != cfg.param_count() as u64 {
        return Err(Error::Format(format!("header declares {count} parameters, architecture has {}", cfg.param_count())));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != 8 * count {
        return Err(Error::Format(format!("parameter block is {} bytes, expected {}", body.len(), 8 * count)));
    }
    let params: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut net = PseudoInvertibleNet::identity(cfg)?;
    net.set_params(&params)?;
    Ok(net)
}

pub fn save_checkpoint(net: &PseudoInvertibleNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PseudoInvertibleNet> {
    from_bytes(&fs::read(path)?)
}
