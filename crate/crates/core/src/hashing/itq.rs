//! ITQ fitting and the codec file.
//!
//! Codec files, integers u32 little-endian:
//!
//! ```text
//! magic "SAKEITQ1" | M | c | iterations | mean[M] | W[M×c] | R[c×c]   (f32 LE)
//! ```
//!
//! Fitting runs in f64. The finished mean, projection and rotation are rounded
//! to f32 before any code is produced, so a codec read back from disk encodes
//! exactly like the one that was fitted.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::code::BinaryCode;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CODEC_MAGIC: &[u8; 8] = b"SAKEITQ1";
pub const DEFAULT_ITERATIONS: usize = 50;

/// Eigenvalues below this fraction of the largest count as zero variance.
const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ItqCodec {
    dim: usize,
    bits: usize,
    iterations: usize,
    mean: Vec<f32>,
    /// `dim × bits`, row-major.
    projection: Vec<f32>,
    /// `bits × bits`, row-major.
    rotation: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItqFit {
    /// `‖B − VR‖²_F` after each round's rotation update.
    pub losses: Vec<f64>,
    /// Set when the features span fewer than the requested bits.
    pub warnings: Vec<String>,
    pub requested_bits: usize,
}

fn round_f32(m: &DMatrix<f64>) -> Vec<f32> {
    // nalgebra is column-major; codec storage is row-major.
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)] as f32)
        .collect()
}

fn to_matrix(rows: usize, cols: usize, v: &[f32]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, v.iter().map(|&x| x as f64))
}

fn sign_matrix(v: &DMatrix<f64>) -> DMatrix<f64> {
    v.map(|x| if x >= 0.0 { 1.0 } else { -1.0 })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian with the signs of
/// R's diagonal folded into Q.
fn random_rotation(c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Fits an ITQ codec with `bits` output bits on the rows of `features`.
pub fn itq_fit(features: &Tensor<f32>, bits: usize, iterations: usize, seed: u64) -> Result<(ItqCodec, ItqFit)> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(Error::contract("itq_fit", format!("features must be [n, M], got {shape:?}")));
    }
    let (n, dim) = (shape[0], shape[1]);
    if bits == 0 || bits > dim {
        return Err(Error::contract("itq_fit", format!("code length {bits} must be in 1..={dim}")));
    }
    if n <= bits {
        return Err(Error::contract("itq_fit", format!("need more than {bits} training rows, got {n}")));
    }
    if !features.is_finite() {
        return Err(Error::contract("itq_fit", "features contain non-finite values"));
    }

    let x = to_matrix(n, dim, features.data());
    let mean: Vec<f32> = x.row_mean().iter().map(|&m| m as f32).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j] as f64);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let rank = order.iter().filter(|&&k| eig.eigenvalues[k] > RANK_TOL * top).count();
    if top <= 0.0 || rank == 0 {
        return Err(Error::contract("itq_fit", "features have no variance"));
    }
    let mut warnings = Vec::new();
    let c = if rank < bits {
        warnings.push(format!("features have rank {rank}; code length reduced from {bits} to {rank}"));
        rank
    } else {
        bits
    };

    let mut w = DMatrix::zeros(dim, c);
    for (j, &k) in order.iter().take(c).enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        w.set_column(j, &col);
    }
    let projection = round_f32(&w);
    let v = centered * to_matrix(dim, c, &projection);

    let mut r = random_rotation(c, seed);
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let b = sign_matrix(&(&v * &r));
        let svd = (v.transpose() * &b).svd(true, true);
        let (u, vt) = (svd.u.expect("requested u"), svd.v_t.expect("requested v_t"));
        r = u * vt;
        losses.push((&b - &v * &r).norm_squared());
    }

    let codec = ItqCodec {
        dim,
        bits: c,
        iterations,
        mean,
        projection,
        rotation: round_f32(&r),
    };
    let fit = ItqFit {
        losses,
        warnings,
        requested_bits: bits,
    };
    Ok((codec, fit))
}

impl ItqCodec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn rotation(&self) -> &[f32] {
        &self.rotation
    }

    /// `(feature − mean)·W·R` in f64.
    pub fn rotate(&self, feature: &[f32]) -> Result<Vec<f64>> {
        if feature.len() != self.dim {
            return Err(Error::contract(
                "encode",
                format!("feature has length {}, codec expects {}", feature.len(), self.dim),
            ));
        }
        let c = self.bits;
        let mut p = vec![0.0f64; c];
        for (i, (&f, &m)) in feature.iter().zip(&self.mean).enumerate() {
            let d = f as f64 - m as f64;
            for (pj, &wij) in p.iter_mut().zip(&self.projection[i * c..(i + 1) * c]) {
                *pj += d * wij as f64;
            }
        }
        let mut q = vec![0.0f64; c];
        for (i, &pi) in p.iter().enumerate() {
            for (qj, &rij) in q.iter_mut().zip(&self.rotation[i * c..(i + 1) * c]) {
                *qj += pi * rij as f64;
            }
        }
        Ok(q)
    }

    pub fn encode(&self, feature: &[f32]) -> Result<BinaryCode> {
        let q = self.rotate(feature)?;
        Ok(BinaryCode::from_bits(&q.iter().map(|&v| v >= 0.0).collect::<Vec<_>>()))
    }

    /// Codes for every row of `features: [n, M]`.
    pub fn encode_rows(&self, features: &Tensor<f32>) -> Result<Vec<BinaryCode>> {
        if features.shape().len() != 2 {
            return Err(Error::contract("encode", format!("features must be [n, M], got {:?}", features.shape())));
        }
        (0..features.shape()[0]).map(|i| self.encode(features.row(i))).collect()
    }

    /// Max-abs entry of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        let r = to_matrix(self.bits, self.bits, &self.rotation);
        let e = r.transpose() * &r - DMatrix::identity(self.bits, self.bits);
        e.amax()
    }
}

pub fn encode_codec(codec: &ItqCodec) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * (codec.mean.len() + codec.projection.len() + codec.rotation.len()));
    buf.extend_from_slice(CODEC_MAGIC);
    for v in [codec.dim, codec.bits, codec.iterations] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in codec.mean.iter().chain(&codec.projection).chain(&codec.rotation) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_codec(bytes: &[u8], origin: &Path) -> Result<ItqCodec> {
    let bad = |d: &str| Error::format(origin, d);
    if bytes.len() < 20 || &bytes[..8] != CODEC_MAGIC {
        return Err(bad("missing SAKEITQ1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (dim, bits, iterations) = (word(0), word(1), word(2));
    if bits == 0 || bits > dim {
        return Err(bad(&format!("code length {bits} invalid for dimension {dim}")));
    }
    let expected = dim + dim * bits + bits * bits;
    let body = &bytes[20..];
    if body.len() != 4 * expected {
        return Err(bad(&format!("expected {} values, found {} bytes", expected, body.len())));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite codec values"));
    }
    Ok(ItqCodec {
        dim,
        bits,
        iterations,
        mean: values[..dim].to_vec(),
        projection: values[dim..dim + dim * bits].to_vec(),
        rotation: values[dim + dim * bits..].to_vec(),
    })
}

pub fn save_codec(codec: &ItqCodec, path: &Path) -> Result<()> {
    std::fs::write(path, encode_codec(codec)).map_err(|e| Error::io(path, e))
}

pub fn load_codec(path: &Path) -> Result<ItqCodec> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_codec(&bytes, path)
}
