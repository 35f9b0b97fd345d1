//! Patch feature extraction and cosine similarity.
//!
//! The built-in encoder is a deterministic hand-crafted descriptor: an 8×8
//! mean-pooled luma grid (64 dims), a 16-bin gradient-orientation histogram
//! weighted by Sobel magnitude (16 dims) and an 8-bin intensity histogram
//! (8 dims), concatenated and L2-normalized. Both histograms split each
//! sample linearly between the two nearest bin centers, so the descriptor
//! moves continuously with pixel values. The orientation block is scaled by
//! the gradient mass, floored at [`ORIENT_FLOOR`] per interior pixel, so a
//! nearly flat patch contributes almost no orientation evidence. All raw
//! features are non-negative, so similarities between built-in embeddings
//! lie in `[0, 1]`.
//!
//! Embeddings computed elsewhere (for example by a pretrained classifier) can
//! be imported from the `RIVEMB1` binary layout and served through
//! [`ImportedEncoder`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::edges::sobel_at;
use crate::error::{Error, Result};
use crate::pixels::PatchView;

/// Dimension of the built-in descriptor.
pub const BUILTIN_DIM: usize = 64 + 16 + 8;

const POOL_GRID: usize = 8;
const ORIENT_BINS: usize = 16;
const INTENSITY_BINS: usize = 8;
/// Mean gradient magnitude below which orientation features are attenuated.
pub const ORIENT_FLOOR: f64 = 32.0;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// L2-normalizes `raw`.
    ///
    /// A raw vector with norm below 1e-12 maps to the first basis vector.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("non-finite embedding"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm < 1e-12 {
            let mut e = vec![0.0f32; raw.len()];
            e[0] = 1.0;
            e
        } else {
            raw.iter().map(|v| (v / norm) as f32).collect()
        };
        Ok(Embedding { values })
    }

    pub fn from_f32(raw: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        Embedding::normalized(&wide)
    }

    /// Wraps values that are already unit-norm (e.g. read back from a table file).
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Embedding { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity without a dimension check; callers guarantee equal lengths.
///
/// Computed as `a·b / sqrt(|a|²|b|²)` so that identical vectors score exactly 1.
#[inline]
pub(crate) fn cosine_unchecked(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot / denom).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    Ok(cosine_unchecked(&a.values, &b.values))
}

/// Maps a patch to an embedding. Implementations must be deterministic.
pub trait PatchEncoder: Send + Sync {
    fn dimension(&self) -> usize;
    fn encode(&self, patch: &PatchView) -> Result<Embedding>;
}

/// The built-in 88-dimensional descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinEncoder;

impl PatchEncoder for BuiltinEncoder {
    fn dimension(&self) -> usize {
        BUILTIN_DIM
    }

    fn encode(&self, patch: &PatchView) -> Result<Embedding> {
        default_encode(patch)
    }
}

/// Raw (unnormalized) built-in features.
pub fn builtin_features(patch: &PatchView) -> Result<Vec<f64>> {
    let n = patch.size;
    if n < POOL_GRID {
        return Err(Error::invalid(format!("encoder needs a patch of at least 8x8, got {n}x{n}")));
    }
    let mut raw = Vec::with_capacity(BUILTIN_DIM);

    for gy in 0..POOL_GRID {
        let (y0, y1) = (gy * n / POOL_GRID, (gy + 1) * n / POOL_GRID);
        for gx in 0..POOL_GRID {
            let (x0, x1) = (gx * n / POOL_GRID, (gx + 1) * n / POOL_GRID);
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += u64::from(patch.get(x, y));
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            raw.push(sum as f64 / count / 255.0);
        }
    }

    let mut orient = [0.0f64; ORIENT_BINS];
    let mut mass = 0.0f64;
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let (gx, gy) = sobel_at(patch, x, y);
            if gx == 0 && gy == 0 {
                continue;
            }
            let mag = f64::from(gx * gx + gy * gy).sqrt();
            let angle = f64::from(gy).atan2(f64::from(gx));
            // Bin centers sit at half-integer positions; weight is split
            // linearly between the two nearest, wrapping around the circle.
            let pos = (angle + std::f64::consts::PI) / std::f64::consts::TAU * ORIENT_BINS as f64 - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = (lo as i64).rem_euclid(ORIENT_BINS as i64) as usize;
            orient[lo] += mag * (1.0 - frac);
            orient[(lo + 1) % ORIENT_BINS] += mag * frac;
            mass += mag;
        }
    }
    let scale = mass.max(ORIENT_FLOOR * ((n - 2) * (n - 2)) as f64);
    raw.extend(orient.iter().map(|&v| v / scale));

    let mut hist = [0.0f64; INTENSITY_BINS];
    let width = 256.0 / INTENSITY_BINS as f64;
    for &v in &patch.pixels {
        let pos = ((f64::from(v) + 0.5) / width - 0.5).clamp(0.0, (INTENSITY_BINS - 1) as f64);
        let lo = (pos.floor() as usize).min(INTENSITY_BINS - 2);
        let frac = pos - lo as f64;
        hist[lo] += 1.0 - frac;
        hist[lo + 1] += frac;
    }
    let total = patch.pixels.len() as f64;
    raw.extend(hist.iter().map(|&c| c / total));

    Ok(raw)
}

pub fn default_encode(patch: &PatchView) -> Result<Embedding> {
    Embedding::normalized(&builtin_features(patch)?)
}

/// Key of an imported embedding: `(frame_index, grid_row, grid_col)`.
pub type PatchKey = (u32, u16, u16);

const EMB_MAGIC: &[u8; 8] = b"RIVEMB1\n";

/// Serializes embeddings in the `RIVEMB1` layout, records in key order.
pub fn encode_embeddings(dimension: usize, map: &HashMap<PatchKey, Embedding>) -> Result<Vec<u8>> {
    let mut keys: Vec<&PatchKey> = map.keys().collect();
    keys.sort();
    let mut out = Vec::with_capacity(20 + keys.len() * (8 + 4 * dimension));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(dimension as u32).to_le_bytes());
    out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
    for key in keys {
        let e = &map[key];
        if e.dimension() != dimension {
            return Err(Error::invalid("embedding dimension differs from file dimension"));
        }
        out.extend_from_slice(&key.0.to_le_bytes());
        out.extend_from_slice(&key.1.to_le_bytes());
        out.extend_from_slice(&key.2.to_le_bytes());
        for v in e.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!("unexpected EOF reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("dimension overflow"))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, HashMap<PatchKey, Embedding>)> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(8, "magic")? != EMB_MAGIC {
        return Err(Error::format("invalid embedding file magic"));
    }
    let dim = cur.u32("dimension")? as usize;
    let count = cur.u64("record count")?;
    if dim == 0 {
        return Err(Error::format("embedding dimension must be positive"));
    }
    let record = 8 + 4 * dim as u64;
    if (cur.remaining() as u64) != count.saturating_mul(record) {
        return Err(Error::format(format!(
            "record count/dimension mismatch: header declares {count} records of dimension {dim}, payload has {} bytes",
            cur.remaining()
        )));
    }
    let mut map = HashMap::with_capacity(count as usize);
    for _ in 0..count {
        let key = (cur.u32("frame index")?, cur.u16("row")?, cur.u16("col")?);
        let values = cur.f32s(dim, "embedding values")?;
        let emb = Embedding::from_f32(&values)?;
        if map.insert(key, emb).is_some() {
            return Err(Error::format(format!("duplicate embedding record for {key:?}")));
        }
    }
    Ok((dim, map))
}

pub fn import_embeddings(path: impl AsRef<Path>) -> Result<(usize, HashMap<PatchKey, Embedding>)> {
    decode_embeddings(&fs::read(path)?)
}

/// Serves precomputed embeddings keyed by patch position.
#[derive(Debug, Clone)]
pub struct ImportedEncoder {
    dimension: usize,
    table: HashMap<PatchKey, Embedding>,
}

impl ImportedEncoder {
    pub fn new(dimension: usize, table: HashMap<PatchKey, Embedding>) -> Self {
        ImportedEncoder { dimension, table }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let (dimension, table) = import_embeddings(path)?;
        Ok(ImportedEncoder { dimension, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl PatchEncoder for ImportedEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, patch: &PatchView) -> Result<Embedding> {
        let key = (patch.frame_index, patch.grid_row, patch.grid_col);
        self.table
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no imported embedding for patch {key:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(size: usize, f: impl Fn(usize, usize) -> u8) -> PatchView {
        let px = (0..size * size).map(|i| f(i % size, i / size)).collect();
        PatchView::from_pixels(size, px).unwrap()
    }

    #[test]
    fn builtin_is_unit_norm_and_sized() {
        let e = default_encode(&patch(32, |x, y| ((x * 13 + y * 7) % 256) as u8)).unwrap();
        assert_eq!(e.dimension(), BUILTIN_DIM);
        assert!((e.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_patches_score_exactly_one() {
        let a = default_encode(&patch(16, |x, y| (x * y % 256) as u8)).unwrap();
        let b = default_encode(&patch(16, |x, y| (x * y % 256) as u8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn black_and_white_are_distinguishable() {
        let a = default_encode(&patch(32, |_, _| 0)).unwrap();
        let b = default_encode(&patch(32, |_, _| 255)).unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() < 0.9);
    }

    #[test]
    fn all_zero_patch_still_has_mass() {
        // Pooled luma and gradients vanish; the intensity histogram does not.
        let e = default_encode(&patch(8, |_, _| 0)).unwrap();
        assert_eq!(e.values()[64 + 16], 1.0);
    }

    #[test]
    fn zero_raw_vector_maps_to_first_basis() {
        let e = Embedding::normalized(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn small_patch_rejected() {
        assert!(default_encode(&patch(7, |_, _| 1)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let x = Embedding::normalized(&[1.0, 0.0]).unwrap();
        let y = Embedding::normalized(&[0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        let a = Embedding::normalized(&[1.0, 0.0]).unwrap();
        let b = Embedding::normalized(&[0.5, 3f64.sqrt() / 2.0]).unwrap();
        assert!((cosine_similarity(&a, &b).unwrap() - 0.5).abs() < 1e-7);
        let z = Embedding::normalized(&[1.0, 0.0, 0.0]).unwrap();
        assert!(cosine_similarity(&a, &z).is_err());
    }

    #[test]
    fn embedding_file_round_trip_and_normalization() {
        let mut map = HashMap::new();
        map.insert((0, 0, 0), Embedding::normalized(&[1.0, 0.0]).unwrap());
        map.insert((1, 2, 3), Embedding::normalized(&[0.0, 1.0]).unwrap());
        let bytes = encode_embeddings(2, &map).unwrap();
        let (dim, back) = decode_embeddings(&bytes).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(back, map);
    }

    fn raw_file(dim: u32, records: &[(u32, u16, u16, Vec<f32>)]) -> Vec<u8> {
        let mut out = EMB_MAGIC.to_vec();
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (f, r, c, v) in records {
            out.extend_from_slice(&f.to_le_bytes());
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn import_renormalizes() {
        let bytes = raw_file(2, &[(0, 0, 0, vec![2.0, 0.0])]);
        let (_, map) = decode_embeddings(&bytes).unwrap();
        assert!((map[&(0, 0, 0)].norm() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn import_rejects_non_finite() {
        let bytes = raw_file(2, &[(0, 0, 0, vec![f32::NAN, 1.0])]);
        let err = decode_embeddings(&bytes).unwrap_err().to_string();
        assert!(err.contains("non-finite embedding"), "{err}");
    }

    #[test]
    fn import_rejects_count_mismatch() {
        let mut bytes = raw_file(2, &[(0, 0, 0, vec![1.0, 0.0])]);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(decode_embeddings(&bytes), Err(Error::Format(_))));
        let mut bytes = raw_file(2, &[(0, 0, 0, vec![1.0, 0.0])]);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_embeddings(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn imported_encoder_looks_up_by_position() {
        let mut map = HashMap::new();
        map.insert((4, 1, 0), Embedding::normalized(&[0.0, 1.0]).unwrap());
        let enc = ImportedEncoder::new(2, map);
        let mut p = patch(8, |_, _| 0);
        assert!(enc.encode(&p).is_err());
        p.frame_index = 4;
        p.grid_row = 1;
        assert_eq!(enc.encode(&p).unwrap().values(), &[0.0, 1.0]);
    }
}
