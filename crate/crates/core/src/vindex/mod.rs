//! Nearest-neighbor search over datastore keys.
//!
//! [`FlatIndex`] is the exact reference; [`IvfPqIndex`] is the approximate
//! inverted-file / product-quantization index used for large stores. Both
//! rank by squared Euclidean distance with ties broken by ascending id.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! "RKIX" | version u32 | kind u8 (0 flat, 1 ivfpq)
//! flat:  dim u32 | n u64 | vectors f32[n*dim] | ids u64[n]
//! ivfpq: dim u32 | n_list u32 | m u32 | ksub u32 | n_probe u32 | n u64
//!        | coarse f32[n_list*dim] | codebooks f32[m*ksub*dim/m]
//!        | codes u8[n*m] | ids u64[n]
//!        | per list: len u64 | positions u32[len]
//! ```

mod flat;
mod ivfpq;
pub mod kmeans;
mod topk;

pub use flat::FlatIndex;
pub use ivfpq::{IvfPqIndex, IvfPqParams, MAX_CODEBOOK};
pub use topk::{Neighbor, TopK};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const INDEX_MAGIC: &[u8; 4] = b"RKIX";
const INDEX_VERSION: u32 = 1;

pub(crate) fn check_query<S>(dim: usize, query: &[S], k: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::Query(format!(
            "query has dimension {}, index has {dim}",
            query.len()
        )));
    }
    if k == 0 {
        return Err(Error::Query("k must be at least 1".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    IvfPq,
}

/// How a store's index is built. Unset IVF-PQ fields take the defaults of
/// [`IvfPqParams::defaults_for`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub n_list: Option<usize>,
    pub m: usize,
    pub n_probe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            kind: IndexKind::IvfPq,
            n_list: None,
            m: 8,
            n_probe: 32,
            kmeans_iters: 25,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn flat() -> Self {
        Self {
            kind: IndexKind::Flat,
            ..Self::default()
        }
    }

    pub fn ivfpq_params(&self, n: usize) -> IvfPqParams {
        let d = IvfPqParams::defaults_for(n, self.seed);
        IvfPqParams {
            n_list: self.n_list.unwrap_or(d.n_list),
            m: self.m,
            n_probe: self.n_probe,
            kmeans_iters: self.kmeans_iters,
            seed: self.seed,
        }
    }
}

/// Either index family behind one search interface.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorIndex<S> {
    Flat(FlatIndex<S>),
    IvfPq(IvfPqIndex<S>),
}

impl<S: Scalar> VectorIndex<S> {
    pub fn build(dim: usize, vectors: Vec<S>, ids: Vec<u64>, cfg: &IndexConfig) -> Result<Self> {
        match cfg.kind {
            IndexKind::Flat => Ok(Self::Flat(FlatIndex::build(dim, vectors, ids)?)),
            IndexKind::IvfPq => {
                let params = cfg.ivfpq_params(ids.len());
                Ok(Self::IvfPq(IvfPqIndex::train(dim, &vectors, ids, params)?))
            }
        }
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            Self::Flat(_) => IndexKind::Flat,
            Self::IvfPq(_) => IndexKind::IvfPq,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Flat(f) => f.dim,
            Self::IvfPq(p) => p.dim,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Flat(f) => f.len(),
            Self::IvfPq(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n_probe` is ignored by the flat index.
    pub fn search(&self, query: &[S], k: usize, n_probe: usize) -> Result<Vec<Neighbor<S>>> {
        match self {
            Self::Flat(f) => f.search(query, k),
            Self::IvfPq(p) => p.search(query, k, n_probe),
        }
    }

    /// Searches with the index's configured probe count.
    pub fn search_default(&self, query: &[S], k: usize) -> Result<Vec<Neighbor<S>>> {
        match self {
            Self::Flat(f) => f.search(query, k),
            Self::IvfPq(p) => p.search(query, k, p.n_probe),
        }
    }
}

impl VectorIndex<f32> {
    pub fn encode(&self, w: &mut ByteWriter) {
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        match self {
            Self::Flat(f) => {
                w.u8(0);
                w.u32(f.dim as u32);
                w.u64(f.len() as u64);
                w.f32s(&f.vectors);
                w.u64s(&f.ids);
            }
            Self::IvfPq(p) => {
                w.u8(1);
                for v in [p.dim, p.n_list, p.m, p.ksub, p.n_probe] {
                    w.u32(v as u32);
                }
                w.u64(p.len() as u64);
                w.f32s(&p.coarse);
                w.f32s(&p.codebooks);
                w.bytes(&p.codes);
                w.u64s(&p.ids);
                for list in &p.lists {
                    w.u64(list.len() as u64);
                    w.u32s(list);
                }
            }
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(INDEX_MAGIC)?;
        r.version(INDEX_VERSION)?;
        match r.u8()? {
            0 => {
                let dim = r.u32()? as usize;
                let n = r.usize()?;
                let vectors = r.f32s(n.checked_mul(dim).ok_or_else(overflow)?)?;
                let ids = r.u64s(n)?;
                Ok(Self::Flat(
                    FlatIndex::build(dim, vectors, ids).map_err(|e| Error::Format(e.to_string()))?,
                ))
            }
            1 => {
                let dim = r.u32()? as usize;
                let n_list = r.u32()? as usize;
                let m = r.u32()? as usize;
                let ksub = r.u32()? as usize;
                let n_probe = r.u32()? as usize;
                let n = r.usize()?;
                if m == 0 || dim % m != 0 || ksub > MAX_CODEBOOK {
                    return Err(Error::Format("inconsistent IVF-PQ header".into()));
                }
                let coarse = r.f32s(n_list.checked_mul(dim).ok_or_else(overflow)?)?;
                let codebooks = r.f32s(ksub.checked_mul(dim).ok_or_else(overflow)?)?;
                let codes = r.take(n.checked_mul(m).ok_or_else(overflow)?)?.to_vec();
                if codes.iter().any(|&c| c as usize >= ksub) {
                    return Err(Error::Format("code outside codebook".into()));
                }
                let ids = r.u64s(n)?;
                let mut lists = Vec::with_capacity(n_list);
                let mut total = 0usize;
                for _ in 0..n_list {
                    let len = r.usize()?;
                    let list = r.u32s(len)?;
                    if list.iter().any(|&p| p as usize >= n) {
                        return Err(Error::Format("list entry out of range".into()));
                    }
                    total += len;
                    lists.push(list);
                }
                if total != n {
                    return Err(Error::Format("inverted lists do not cover all entries".into()));
                }
                Ok(Self::IvfPq(IvfPqIndex {
                    dim,
                    n_list,
                    m,
                    ksub,
                    n_probe,
                    coarse,
                    codebooks,
                    codes,
                    ids,
                    lists,
                }))
            }
            k => Err(Error::Format(format!("unknown index kind {k}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ByteWriter::new();
        self.encode(&mut w);
        w.write_to(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(&bytes);
        let idx = Self::decode(&mut r)?;
        r.finish()?;
        Ok(idx)
    }
}

fn overflow() -> Error {
    Error::Format("length overflow".into())
}
