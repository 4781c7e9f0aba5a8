//! Labeled graph records, the JSONL dataset format, and class-based splits.

mod synth;

pub use synth::{generate_synthetic, generate_synthetic_with, AtomSignature, BondSignature, SynthConfig};

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected edge between two node indices carrying a categorical feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub feat: usize,
}

impl From<[usize; 3]> for Edge {
    fn from([u, v, feat]: [usize; 3]) -> Self {
        Edge { u, v, feat }
    }
}

impl From<Edge> for [usize; 3] {
    fn from(e: Edge) -> Self {
        [e.u, e.v, e.feat]
    }
}

impl Edge {
    /// Endpoints as `(min, max)`.
    pub fn canonical(&self) -> (usize, usize) {
        (self.u.min(self.v), self.u.max(self.v))
    }
}

/// One target graph with per-site template labels (0 = no template).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub nodes: Vec<usize>,
    pub edges: Vec<Edge>,
    pub atom_labels: Vec<u32>,
    pub bond_labels: Vec<u32>,
    #[serde(rename = "class")]
    pub reaction_class: u8,
}

/// A site where a template may apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Site {
    Atom(usize),
    Bond(usize),
}

impl ReactionRecord {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// For every node, the incident `(neighbor, edge index)` pairs in edge order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.u].push((e.v, i));
            adj[e.v].push((e.u, i));
        }
        adj
    }

    /// Ground-truth `(site, template)` pairs with a nonzero label.
    pub fn centers(&self) -> Vec<(Site, u32)> {
        let atoms = self
            .atom_labels
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != 0)
            .map(|(i, &t)| (Site::Atom(i), t));
        let bonds = self
            .bond_labels
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != 0)
            .map(|(i, &t)| (Site::Bond(i), t));
        atoms.chain(bonds).collect()
    }

    /// Checks structural invariants against the declared vocabulary sizes.
    pub fn validate(&self, header: &DatasetHeader) -> std::result::Result<(), String> {
        let n = self.nodes.len();
        if self.atom_labels.len() != n {
            return Err(format!(
                "atom_labels has {} entries for {} nodes",
                self.atom_labels.len(),
                n
            ));
        }
        if self.bond_labels.len() != self.edges.len() {
            return Err(format!(
                "bond_labels has {} entries for {} edges",
                self.bond_labels.len(),
                self.edges.len()
            ));
        }
        if !(1..=10).contains(&self.reaction_class) {
            return Err(format!("reaction class {} outside [1, 10]", self.reaction_class));
        }
        if let Some(f) = self.nodes.iter().find(|&&f| f >= header.node_vocab) {
            return Err(format!("node feature {f} outside vocabulary of {}", header.node_vocab));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.u >= n || e.v >= n {
                return Err(format!("edge ({}, {}) references a node outside 0..{n}", e.u, e.v));
            }
            if e.u == e.v {
                return Err(format!("self-loop on node {}", e.u));
            }
            if e.feat >= header.edge_vocab {
                return Err(format!(
                    "edge feature {} outside vocabulary of {}",
                    e.feat, header.edge_vocab
                ));
            }
            if !seen.insert(e.canonical()) {
                return Err(format!("duplicate edge ({}, {})", e.u, e.v));
            }
        }
        if let Some(t) = self
            .atom_labels
            .iter()
            .find(|&&t| t as usize > header.n_atom_templates)
        {
            return Err(format!("atom label {t} exceeds {} templates", header.n_atom_templates));
        }
        if let Some(t) = self
            .bond_labels
            .iter()
            .find(|&&t| t as usize > header.n_bond_templates)
        {
            return Err(format!("bond label {t} exceeds {} templates", header.n_bond_templates));
        }
        Ok(())
    }
}

/// Vocabulary and template-set sizes shared by every record of a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub n_atom_templates: usize,
    pub n_bond_templates: usize,
    pub node_vocab: usize,
    pub edge_vocab: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<ReactionRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<ReactionRecord>) -> Result<Self> {
        let d = Self { header, records };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            r.validate(&self.header)
                .map_err(|msg| Error::Validation { record: i, msg })?;
        }
        Ok(())
    }

    fn with_records(&self, records: Vec<ReactionRecord>) -> Self {
        Self {
            header: self.header,
            records,
        }
    }

    /// Serializes to the JSONL format: header line, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Parses JSONL text. An input with no lines is an empty dataset.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            None => return Ok(Self::default()),
            Some((i, line)) => serde_json::from_str::<DatasetHeader>(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("header: {e}"),
            })?,
        };
        let records = lines
            .map(|(i, line)| {
                serde_json::from_str::<ReactionRecord>(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(header, records)
    }
}

/// Reads and validates a JSONL dataset file.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    Dataset::from_jsonl(&text)
}

/// Drops every record whose reaction class is held out.
pub fn build_zero_shot_split(d: &Dataset, held_classes: &BTreeSet<u8>) -> Dataset {
    d.with_records(
        d.records
            .iter()
            .filter(|r| !held_classes.contains(&r.reaction_class))
            .cloned()
            .collect(),
    )
}

/// Keeps all non-held records and `floor(keep_fraction * n_c)` records of each
/// held class `c`, chosen by a seeded shuffle. Output keeps the input order.
pub fn build_few_shot_split(
    d: &Dataset,
    held_classes: &BTreeSet<u8>,
    keep_fraction: f64,
    seed: u64,
) -> Dataset {
    let keep_fraction = keep_fraction.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; d.records.len()];
    for &class in held_classes {
        let mut idx: Vec<usize> = d
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.reaction_class == class)
            .map(|(i, _)| i)
            .collect();
        // Tolerance absorbs products such as 0.29 * 100 = 28.999999999999996.
        let n_keep = ((keep_fraction * idx.len() as f64) + 1e-9).floor() as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[n_keep.min(idx.len())..] {
            keep[i] = false;
        }
    }
    d.with_records(
        d.records
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect(),
    )
}
