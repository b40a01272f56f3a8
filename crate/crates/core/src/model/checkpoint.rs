//! Binary parameter checkpoints.
//!
//! Layout, all integers u32 little-endian:
//!
//! ```text
//! magic "SAKECKP1" | version | side | n_blocks | channels[n_blocks] | reduction
//! | embed_dim | n_source | n_original | domain_code_width | pool_grid | n_scalars
//! | f32 LE values in param_layout order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{param_layout, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAKECKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let cfg = &params.config;
    let mut buf = Vec::with_capacity(64 + 4 * params.num_scalars());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize);
    put_u32(&mut buf, cfg.side);
    put_u32(&mut buf, cfg.channels.len());
    for &c in &cfg.channels {
        put_u32(&mut buf, c);
    }
    for v in [
        cfg.reduction,
        cfg.embed_dim,
        cfg.n_source,
        cfg.n_original,
        cfg.domain_code_width,
        cfg.pool_grid,
        params.num_scalars(),
    ] {
        put_u32(&mut buf, v);
    }
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ModelParams<f32>> {
    let bad = |d: &str| Error::format(origin, d);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("missing SAKECKP1 magic"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let side = r.u32().ok_or_else(|| bad("truncated header"))?;
    let n_blocks = r.u32().ok_or_else(|| bad("truncated header"))?;
    if n_blocks > 16 {
        return Err(bad("implausible block count"));
    }
    let channels = (0..n_blocks)
        .map(|_| r.u32().ok_or_else(|| bad("truncated header")))
        .collect::<Result<Vec<_>>>()?;
    let mut rest = [0usize; 7];
    for v in rest.iter_mut() {
        *v = r.u32().ok_or_else(|| bad("truncated header"))?;
    }
    let [reduction, embed_dim, n_source, n_original, domain_code_width, pool_grid, n_scalars] = rest;
    let config = ModelConfig {
        side,
        channels,
        reduction,
        embed_dim,
        n_source,
        n_original,
        domain_code_width,
        pool_grid,
    };
    config
        .validate()
        .map_err(|e| bad(&format!("invalid config: {e}")))?;
    let layout = param_layout(&config);
    let expected: usize = layout.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if n_scalars != expected {
        return Err(bad(&format!("header declares {n_scalars} values, layout needs {expected}")));
    }
    let body = r.take(4 * expected).ok_or_else(|| bad("truncated parameter data"))?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let tensors = layout
        .iter()
        .map(|p| {
            let n = p.shape.iter().product();
            Tensor::new(&p.shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(config, tensors)?;
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(params))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
