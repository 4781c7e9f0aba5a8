//! Atom and bond datastores: one `(hidden state, template)` entry per site of
//! every training graph, in dataset order (nodes ascending, then edges
//! ascending), with a vector index over the keys.
//!
//! Store file layout (little-endian): `"RKST" | version u32 | kind u8
//! (0 atom, 1 bond) | n u64 | dim u32 | keys f32[n*dim] | values u32[n]`,
//! followed by the embedded index file (see [`crate::vindex`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::graphio::Dataset;
use crate::scalar::Scalar;
use crate::vindex::{IndexConfig, VectorIndex};

const MAGIC: &[u8; 4] = b"RKST";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Atom,
    Bond,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateStore {
    pub kind: StoreKind,
    pub dim: usize,
    /// Row-major `len × dim`.
    pub keys: Vec<f32>,
    /// Template id per entry; 0 marks a site where no template applies.
    pub values: Vec<u32>,
    /// Index over `keys`; entry ids are row positions.
    pub index: VectorIndex<f32>,
}

/// One retrieved entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoreHit {
    pub template: u32,
    pub distance: f32,
    pub entry: u64,
}

impl TemplateStore {
    pub fn from_entries(
        kind: StoreKind,
        dim: usize,
        keys: Vec<f32>,
        values: Vec<u32>,
        cfg: &IndexConfig,
    ) -> Result<Self> {
        if keys.len() != values.len() * dim {
            return Err(Error::Config(format!(
                "{} key values for {} entries of dimension {dim}",
                keys.len(),
                values.len()
            )));
        }
        let ids: Vec<u64> = (0..values.len() as u64).collect();
        let index = if values.is_empty() {
            VectorIndex::build(dim, Vec::new(), ids, &IndexConfig::flat())?
        } else {
            let mut cfg = *cfg;
            if kind == StoreKind::Bond {
                cfg.seed = cfg.seed.wrapping_add(1);
            }
            VectorIndex::build(dim, keys.clone(), ids, &cfg)?
        };
        Ok(Self {
            kind,
            dim,
            keys,
            values,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    /// Up to `k` nearest entries, ascending by distance.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<StoreHit>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .index
            .search_default(query, k)?
            .into_iter()
            .map(|n| StoreHit {
                template: self.values[n.id as usize],
                distance: n.distance,
                entry: n.id,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(match self.kind {
            StoreKind::Atom => 0,
            StoreKind::Bond => 1,
        });
        w.u64(self.len() as u64);
        w.u32(self.dim as u32);
        w.f32s(&self.keys);
        w.u32s(&self.values);
        self.index.encode(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let kind = match r.u8()? {
            0 => StoreKind::Atom,
            1 => StoreKind::Bond,
            k => return Err(Error::Format(format!("unknown store kind {k}"))),
        };
        let n = r.usize()?;
        let dim = r.u32()? as usize;
        let keys = r.f32s(n.checked_mul(dim).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        let values = r.u32s(n)?;
        let index = VectorIndex::decode(&mut r)?;
        r.finish()?;
        if index.len() != n || (n > 0 && index.dim() != dim) {
            return Err(Error::Format("index does not match store entries".into()));
        }
        Ok(Self {
            kind,
            dim,
            keys,
            values,
            index,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Encodes every training graph and records one entry per node and per edge.
pub fn build_stores<S: Scalar>(
    train: &Dataset,
    backbone: &BackboneParams<S>,
    index_cfg: &IndexConfig,
) -> Result<(TemplateStore, TemplateStore)> {
    if !train.is_empty() && !backbone.config.matches(&train.header) {
        return Err(Error::Config("backbone vocabulary does not match the dataset".into()));
    }
    let dim = backbone.config.hidden;
    let n_atoms: usize = train.records.iter().map(|r| r.n_nodes()).sum();
    let n_bonds: usize = train.records.iter().map(|r| r.n_edges()).sum();
    let mut atom_keys = Vec::with_capacity(n_atoms * dim);
    let mut atom_values = Vec::with_capacity(n_atoms);
    let mut bond_keys = Vec::with_capacity(n_bonds * dim);
    let mut bond_values = Vec::with_capacity(n_bonds);
    for r in &train.records {
        let emb = backbone.encode(r)?;
        for (h, &t) in emb.nodes.iter().zip(&r.atom_labels) {
            atom_keys.extend(h.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
            atom_values.push(t);
        }
        for (h, &t) in emb.edges.iter().zip(&r.bond_labels) {
            bond_keys.extend(h.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
            bond_values.push(t);
        }
    }
    let atom = TemplateStore::from_entries(StoreKind::Atom, dim, atom_keys, atom_values, index_cfg)?;
    let bond = TemplateStore::from_entries(StoreKind::Bond, dim, bond_keys, bond_values, index_cfg)?;
    Ok((atom, bond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::graphio::{generate_synthetic, DatasetHeader, Edge, ReactionRecord};

    fn tiny_dataset() -> Dataset {
        let header = DatasetHeader {
            n_atom_templates: 6,
            n_bond_templates: 2,
            node_vocab: 3,
            edge_vocab: 2,
        };
        Dataset::new(
            header,
            vec![ReactionRecord {
                nodes: vec![0, 1, 2],
                edges: vec![Edge { u: 0, v: 1, feat: 0 }, Edge { u: 1, v: 2, feat: 1 }],
                atom_labels: vec![0, 5, 0],
                bond_labels: vec![0, 0],
                reaction_class: 1,
            }],
        )
        .unwrap()
    }

    #[test]
    fn one_entry_per_site_in_site_order() {
        let d = tiny_dataset();
        let bb = BackboneParams::<f64>::init(BackboneConfig::for_dataset(&d.header, 1, 4), 0).unwrap();
        let (a, b) = build_stores(&d, &bb, &IndexConfig::flat()).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 2);
        assert_eq!(a.values, vec![0, 5, 0]);
        let emb = bb.encode(&d.records[0]).unwrap();
        assert_eq!(a.key(1), emb.nodes[1].iter().map(|&v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn store_file_roundtrip_and_truncation() {
        let (train, _, _) = generate_synthetic(120, 6, 4, 0.0, 1).unwrap();
        let bb = BackboneParams::<f64>::init(BackboneConfig::for_dataset(&train.header, 1, 8), 3).unwrap();
        let cfg = IndexConfig {
            m: 4,
            ..IndexConfig::default()
        };
        let (a, b) = build_stores(&train, &bb, &cfg).unwrap();
        for s in [&a, &b] {
            let bytes = s.to_bytes();
            assert_eq!(TemplateStore::from_bytes(&bytes).unwrap(), *s);
            assert!(TemplateStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
            assert!(TemplateStore::from_bytes(&bytes[..20]).is_err());
        }
    }

    #[test]
    fn empty_store_roundtrip() {
        let s = TemplateStore::from_entries(StoreKind::Bond, 4, vec![], vec![], &IndexConfig::default()).unwrap();
        let back = TemplateStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.kind, StoreKind::Bond);
        assert!(back.search(&[0.0; 4], 3).unwrap().is_empty());
    }
}
