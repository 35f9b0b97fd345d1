//! The model lookup table.
//!
//! Each entry pairs a model identifier with the spherical k-means centers of
//! the pruned patch embeddings of the segment the model was fitted on. A
//! patch is routed to the entry owning the single most similar center.

use std::fs;
use std::path::Path;

use crate::clustering::{spherical_kmeans_with, KMeansConfig};
use crate::encoder::{cosine_unchecked, ByteCursor, Embedding};
use crate::error::{Error, Result};
use crate::pixels::SegmentId;

/// Identity and payload size of a fitted model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelId {
    pub id: u32,
    pub size_bytes: u64,
    /// Segment the model was fitted on. Not persisted in table files.
    pub source_segment: Option<SegmentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooEntry {
    pub model: ModelId,
    pub centers: Vec<Embedding>,
}

impl ZooEntry {
    pub fn k_effective(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    dimension: usize,
    k: usize,
    entries: Vec<ZooEntry>,
}

impl LookupTable {
    pub fn new(dimension: usize, k: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("table dimension must be positive"));
        }
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(LookupTable {
            dimension,
            k,
            entries: Vec::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[ZooEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_model_id(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.model.id + 1)
    }

    /// Appends an entry after validating its shape against the table.
    pub fn push(&mut self, entry: ZooEntry) -> Result<&ZooEntry> {
        if entry.centers.is_empty() || entry.centers.len() > self.k {
            return Err(Error::invalid(format!(
                "entry has {} centers, table allows 1..={}",
                entry.centers.len(),
                self.k
            )));
        }
        if entry.centers.iter().any(|c| c.dimension() != self.dimension) {
            return Err(Error::invalid(format!(
                "entry dimension differs from table dimension {}",
                self.dimension
            )));
        }
        if let Some(last) = self.entries.last() {
            if entry.model.id <= last.model.id {
                return Err(Error::invalid("model ids must be strictly increasing"));
            }
        }
        self.entries.push(entry);
        Ok(self.entries.last().unwrap())
    }
}

/// Clusters a segment's pruned embeddings and registers the result as a new model.
pub fn build_entry<'t>(
    table: &'t mut LookupTable,
    embeddings: &[Embedding],
    seed: u64,
    model_size_bytes: u64,
    segment: Option<SegmentId>,
) -> Result<&'t ZooEntry> {
    let cfg = KMeansConfig::new(table.k, seed);
    build_entry_with(table, embeddings, &cfg, model_size_bytes, segment)
}

pub fn build_entry_with<'t>(
    table: &'t mut LookupTable,
    embeddings: &[Embedding],
    cfg: &KMeansConfig,
    model_size_bytes: u64,
    segment: Option<SegmentId>,
) -> Result<&'t ZooEntry> {
    if embeddings.is_empty() {
        return Err(Error::NoComplexPatches);
    }
    if embeddings.iter().any(|e| e.dimension() != table.dimension) {
        return Err(Error::invalid("embedding dimension differs from table dimension"));
    }
    let cfg = KMeansConfig { k: table.k, ..*cfg };
    let clusters = spherical_kmeans_with(embeddings, &cfg)?;
    let entry = ZooEntry {
        model: ModelId {
            id: table.next_model_id(),
            size_bytes: model_size_bytes,
            source_segment: segment,
        },
        centers: clusters.centers,
    };
    table.push(entry)
}

/// Best match of a patch embedding in the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryHit {
    pub model_index: usize,
    pub center_index: usize,
    pub similarity: f64,
}

/// Exhaustive argmax of cosine similarity over every center of every entry.
///
/// Ties go to the lowest entry index, then the lowest center index.
pub fn query_patch(embedding: &Embedding, table: &LookupTable) -> Result<QueryHit> {
    if table.is_empty() {
        return Err(Error::NoModels);
    }
    if embedding.dimension() != table.dimension {
        return Err(Error::invalid(format!(
            "query dimension {} differs from table dimension {}",
            embedding.dimension(),
            table.dimension
        )));
    }
    let mut best = QueryHit {
        model_index: 0,
        center_index: 0,
        similarity: f64::NEG_INFINITY,
    };
    for (j, entry) in table.entries.iter().enumerate() {
        for (k, center) in entry.centers.iter().enumerate() {
            let s = cosine_unchecked(embedding.values(), center.values());
            if s > best.similarity {
                best = QueryHit {
                    model_index: j,
                    center_index: k,
                    similarity: s,
                };
            }
        }
    }
    Ok(best)
}

const TABLE_MAGIC: &[u8; 8] = b"RIVZOO1\n";

pub fn encode_table(table: &LookupTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&(table.dimension as u32).to_le_bytes());
    out.extend_from_slice(&(table.k as u32).to_le_bytes());
    out.extend_from_slice(&(table.entries.len() as u32).to_le_bytes());
    for e in &table.entries {
        out.extend_from_slice(&e.model.id.to_le_bytes());
        out.extend_from_slice(&e.model.size_bytes.to_le_bytes());
        out.extend_from_slice(&(e.centers.len() as u32).to_le_bytes());
        for c in &e.centers {
            for v in c.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_table(bytes: &[u8]) -> Result<LookupTable> {
    let mut cur = ByteCursor::new(bytes);
    let magic = cur.take(8, "magic")?;
    if magic != TABLE_MAGIC {
        if magic.starts_with(b"RIVZOO") {
            return Err(Error::format(format!(
                "unsupported table version {:?}",
                String::from_utf8_lossy(&magic[6..7])
            )));
        }
        return Err(Error::format("invalid table magic"));
    }
    let dim = cur.u32("dimension")? as usize;
    let k = cur.u32("K")? as usize;
    let r = cur.u32("entry count")?;
    if dim == 0 || k == 0 {
        return Err(Error::format("table header declares zero dimension or K"));
    }
    let mut table = LookupTable::new(dim, k)?;
    for i in 0..r {
        let id = cur.u32("model id")?;
        let size_bytes = cur.u64("model size")?;
        let k_eff = cur.u32("K_effective")? as usize;
        if k_eff == 0 || k_eff > k {
            return Err(Error::format(format!("entry {i}: K_effective {k_eff} outside 1..={k}")));
        }
        let mut centers = Vec::with_capacity(k_eff);
        for _ in 0..k_eff {
            let values = cur
                .f32s(dim, "center values")
                .map_err(|_| Error::format(format!("entry {i}: payload shorter than declared dimension {dim}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(format!("entry {i}: non-finite center value")));
            }
            let center = Embedding::from_unit(values);
            if (center.norm() - 1.0).abs() > 1e-4 {
                return Err(Error::format(format!("entry {i}: center is not unit-norm")));
            }
            centers.push(center);
        }
        table
            .push(ZooEntry {
                model: ModelId {
                    id,
                    size_bytes,
                    source_segment: None,
                },
                centers,
            })
            .map_err(|e| Error::format(format!("entry {i}: {e}")))?;
    }
    if cur.remaining() != 0 {
        return Err(Error::format(format!(
            "payload length does not match declared dimension {dim} ({} trailing bytes)",
            cur.remaining()
        )));
    }
    Ok(table)
}

pub fn save_table(table: &LookupTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_table(table))?;
    Ok(())
}

pub fn load_table(path: impl AsRef<Path>) -> Result<LookupTable> {
    decode_table(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    fn entry(id: u32, centers: Vec<Embedding>) -> ZooEntry {
        ZooEntry {
            model: ModelId {
                id,
                size_bytes: 2_100_000,
                source_segment: None,
            },
            centers,
        }
    }

    #[test]
    fn empty_table_query_fails() {
        let t = LookupTable::new(2, 5).unwrap();
        assert!(matches!(query_patch(&e(&[1.0, 0.0]), &t), Err(Error::NoModels)));
    }

    #[test]
    fn exact_center_match() {
        let mut t = LookupTable::new(3, 2).unwrap();
        for id in 0..4 {
            let a = e(&[1.0, id as f64, 0.3]);
            let b = e(&[0.2, 1.0, id as f64 + 0.5]);
            t.push(entry(id, vec![a, b])).unwrap();
        }
        let probe = t.entries()[3].centers[1].clone();
        let hit = query_patch(&probe, &t).unwrap();
        assert_eq!((hit.model_index, hit.center_index, hit.similarity), (3, 1, 1.0));
    }

    #[test]
    fn ties_go_to_lowest_entry() {
        let c = e(&[0.6, 0.8]);
        let mut t = LookupTable::new(2, 1).unwrap();
        t.push(entry(0, vec![e(&[1.0, 0.0])])).unwrap();
        t.push(entry(1, vec![c.clone()])).unwrap();
        t.push(entry(2, vec![c.clone()])).unwrap();
        assert_eq!(query_patch(&c, &t).unwrap().model_index, 1);
    }

    #[test]
    fn build_registers_dense_ids() {
        let mut t = LookupTable::new(2, 5).unwrap();
        let pts = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[1.0, 0.0])];
        assert_eq!(build_entry(&mut t, &pts, 1, 10, None).unwrap().model.id, 0);
        let second = build_entry(&mut t, &pts, 2, 10, None).unwrap();
        assert_eq!(second.model.id, 1);
        assert_eq!(second.k_effective(), 2);
        assert!(matches!(build_entry(&mut t, &[], 3, 10, None), Err(Error::NoComplexPatches)));
    }

    #[test]
    fn push_validates_shape() {
        let mut t = LookupTable::new(2, 1).unwrap();
        assert!(t.push(entry(0, vec![])).is_err());
        assert!(t.push(entry(0, vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])])).is_err());
        assert!(t.push(entry(0, vec![e(&[1.0, 0.0, 0.0])])).is_err());
        t.push(entry(4, vec![e(&[1.0, 0.0])])).unwrap();
        assert!(t.push(entry(4, vec![e(&[1.0, 0.0])])).is_err());
    }

    #[test]
    fn empty_table_round_trips() {
        let t = LookupTable::new(88, 5).unwrap();
        let back = decode_table(&encode_table(&t)).unwrap();
        assert_eq!(back, t);
        assert!(back.is_empty());
    }

    #[test]
    fn table_round_trip() {
        let mut t = LookupTable::new(3, 2).unwrap();
        t.push(entry(0, vec![e(&[1.0, 2.0, 3.0])])).unwrap();
        t.push(entry(1, vec![e(&[3.0, 2.0, 1.0]), e(&[0.0, 0.0, 1.0])])).unwrap();
        let bytes = encode_table(&t);
        let back = decode_table(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_table(&back), bytes);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut t = LookupTable::new(3, 1).unwrap();
        t.push(entry(0, vec![e(&[1.0, 2.0, 3.0])])).unwrap();
        let mut bytes = encode_table(&t);
        // Declare D = 2 while the payload carries 3 floats.
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_table(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_table(&t);
        bytes[8..12].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_table(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_detected() {
        let t = LookupTable::new(3, 1).unwrap();
        let mut bytes = encode_table(&t);
        bytes[6] = b'2';
        let err = decode_table(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported table version"), "{err}");
    }
}
