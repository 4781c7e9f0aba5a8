//! Seeded synthetic corpus whose template labels are a pure function of the
//! radius-1 neighborhood of each site.
//!
//! Every template owns one signature. A record plants exactly one template
//! motif and fills the rest of the graph with random nodes attached to the
//! motif's periphery; records where any other site happens to reproduce a
//! template signature are resampled, so the planted site is the only center.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetHeader, Edge, ReactionRecord};
use crate::error::{Error, Result};

/// Node feature plus sorted multiset of `(edge feature, neighbor feature)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomSignature {
    pub feat: usize,
    pub neighbors: Vec<(usize, usize)>,
}

/// Edge feature plus the sorted pair of endpoint signatures, each endpoint
/// excluding the bond itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BondSignature {
    pub feat: usize,
    pub ends: [AtomSignature; 2],
}

impl AtomSignature {
    pub fn of(r: &ReactionRecord, adj: &[Vec<(usize, usize)>], v: usize, skip_edge: Option<usize>) -> Self {
        let mut neighbors: Vec<(usize, usize)> = adj[v]
            .iter()
            .filter(|&&(_, e)| Some(e) != skip_edge)
            .map(|&(u, e)| (r.edges[e].feat, r.nodes[u]))
            .collect();
        neighbors.sort_unstable();
        Self {
            feat: r.nodes[v],
            neighbors,
        }
    }
}

impl BondSignature {
    pub fn of(r: &ReactionRecord, adj: &[Vec<(usize, usize)>], e: usize) -> Self {
        let edge = r.edges[e];
        let mut ends = [
            AtomSignature::of(r, adj, edge.u, Some(e)),
            AtomSignature::of(r, adj, edge.v, Some(e)),
        ];
        ends.sort();
        Self { feat: edge.feat, ends }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub n_atom_templates: usize,
    pub n_bond_templates: usize,
    /// Fraction of templates that occur only 1–4 times in train.
    pub rare_template_fraction: f64,
    pub seed: u64,
    pub node_vocab: usize,
    pub edge_vocab: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Probability that a record's reaction class differs from its template's home class.
    pub class_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 1000,
            n_atom_templates: 20,
            n_bond_templates: 10,
            rare_template_fraction: 0.0,
            seed: 0,
            node_vocab: 8,
            edge_vocab: 3,
            min_nodes: 6,
            max_nodes: 20,
            val_fraction: 0.1,
            test_fraction: 0.1,
            class_noise: 0.1,
        }
    }
}

/// Degree of an atom-template center, and of each bond-template endpoint
/// (including the bond).
const MOTIF_DEGREE: usize = 3;
const ATOM_MOTIF_NODES: usize = 1 + MOTIF_DEGREE;
const BOND_MOTIF_NODES: usize = 2 + 2 * (MOTIF_DEGREE - 1);
const RARE_MAX_COUNT: usize = 4;
const COMMON_MIN_COUNT: usize = 5;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum TemplateRef {
    Atom(u32),
    Bond(u32),
}

/// Convenience entry point with default vocabulary and split sizes.
pub fn generate_synthetic(
    n_records: usize,
    n_atom_templates: usize,
    n_bond_templates: usize,
    rare_template_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    generate_synthetic_with(&SynthConfig {
        n_records,
        n_atom_templates,
        n_bond_templates,
        rare_template_fraction,
        seed,
        ..SynthConfig::default()
    })
}

fn multichoose(n: u128, k: u128) -> u128 {
    // C(n + k - 1, k)
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n + i) / (i + 1);
    }
    acc
}

fn check_config(cfg: &SynthConfig) -> Result<()> {
    if cfg.n_records == 0 || cfg.node_vocab == 0 || cfg.edge_vocab == 0 {
        return Err(Error::Generation("sizes must be positive".into()));
    }
    if cfg.n_atom_templates + cfg.n_bond_templates == 0 {
        return Err(Error::Generation("at least one template required".into()));
    }
    if cfg.min_nodes < BOND_MOTIF_NODES.max(ATOM_MOTIF_NODES) || cfg.max_nodes < cfg.min_nodes {
        return Err(Error::Generation(format!(
            "node range [{}, {}] cannot host a {BOND_MOTIF_NODES}-node motif",
            cfg.min_nodes, cfg.max_nodes
        )));
    }
    if !(0.0..=1.0).contains(&cfg.rare_template_fraction) || !(0.0..=1.0).contains(&cfg.class_noise) {
        return Err(Error::Generation("fractions must lie in [0, 1]".into()));
    }
    let pairs = (cfg.node_vocab * cfg.edge_vocab) as u128;
    let atom_capacity = cfg.node_vocab as u128 * multichoose(pairs, MOTIF_DEGREE as u128);
    let end_capacity = cfg.node_vocab as u128 * multichoose(pairs, (MOTIF_DEGREE - 1) as u128);
    let bond_capacity = cfg.edge_vocab as u128 * multichoose(end_capacity, 2);
    if cfg.n_atom_templates as u128 > atom_capacity {
        return Err(Error::Generation(format!(
            "{} atom templates exceed {atom_capacity} distinct neighborhoods",
            cfg.n_atom_templates
        )));
    }
    if cfg.n_bond_templates as u128 > bond_capacity {
        return Err(Error::Generation(format!(
            "{} bond templates exceed {bond_capacity} distinct neighborhoods",
            cfg.n_bond_templates
        )));
    }
    Ok(())
}

fn random_star<R: Rng>(cfg: &SynthConfig, degree: usize, rng: &mut R) -> AtomSignature {
    let mut neighbors: Vec<(usize, usize)> = (0..degree)
        .map(|_| (rng.gen_range(0..cfg.edge_vocab), rng.gen_range(0..cfg.node_vocab)))
        .collect();
    neighbors.sort_unstable();
    AtomSignature {
        feat: rng.gen_range(0..cfg.node_vocab),
        neighbors,
    }
}

struct Motifs {
    atoms: Vec<AtomSignature>,
    bonds: Vec<BondSignature>,
    atom_lookup: HashMap<AtomSignature, u32>,
    bond_lookup: HashMap<BondSignature, u32>,
}

fn sample_motifs<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Motifs {
    let mut atoms = Vec::with_capacity(cfg.n_atom_templates);
    let mut atom_lookup = HashMap::new();
    while atoms.len() < cfg.n_atom_templates {
        let sig = random_star(cfg, MOTIF_DEGREE, rng);
        if !atom_lookup.contains_key(&sig) {
            atom_lookup.insert(sig.clone(), atoms.len() as u32 + 1);
            atoms.push(sig);
        }
    }
    let mut bonds = Vec::with_capacity(cfg.n_bond_templates);
    let mut bond_lookup = HashMap::new();
    while bonds.len() < cfg.n_bond_templates {
        let mut ends = [
            random_star(cfg, MOTIF_DEGREE - 1, rng),
            random_star(cfg, MOTIF_DEGREE - 1, rng),
        ];
        ends.sort();
        let sig = BondSignature {
            feat: rng.gen_range(0..cfg.edge_vocab),
            ends,
        };
        if !bond_lookup.contains_key(&sig) {
            bond_lookup.insert(sig.clone(), bonds.len() as u32 + 1);
            bonds.push(sig);
        }
    }
    Motifs {
        atoms,
        bonds,
        atom_lookup,
        bond_lookup,
    }
}

/// Labels every site of `r` from the template signature tables.
fn label(r: &mut ReactionRecord, motifs: &Motifs) {
    let adj = r.adjacency();
    r.atom_labels = (0..r.nodes.len())
        .map(|v| {
            motifs
                .atom_lookup
                .get(&AtomSignature::of(r, &adj, v, None))
                .copied()
                .unwrap_or(0)
        })
        .collect();
    r.bond_labels = (0..r.edges.len())
        .map(|e| {
            motifs
                .bond_lookup
                .get(&BondSignature::of(r, &adj, e))
                .copied()
                .unwrap_or(0)
        })
        .collect();
}

fn build_record<R: Rng>(
    cfg: &SynthConfig,
    motifs: &Motifs,
    template: TemplateRef,
    class: u8,
    rng: &mut R,
) -> Result<ReactionRecord> {
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
        let mut feats: Vec<usize> = Vec::with_capacity(n);
        let mut edges: Vec<(usize, usize, usize)> = Vec::new();
        let mut protected: Vec<usize> = Vec::new();
        // Planted site index in pre-permutation numbering.
        let planted_edge;
        match template {
            TemplateRef::Atom(t) => {
                let sig = &motifs.atoms[t as usize - 1];
                feats.push(sig.feat);
                protected.push(0);
                for &(ef, nf) in &sig.neighbors {
                    feats.push(nf);
                    edges.push((0, feats.len() - 1, ef));
                }
                planted_edge = None;
            }
            TemplateRef::Bond(t) => {
                let sig = &motifs.bonds[t as usize - 1];
                // Random orientation of the sorted endpoint pair.
                let flip = rng.gen_bool(0.5);
                let (a, b) = if flip {
                    (&sig.ends[1], &sig.ends[0])
                } else {
                    (&sig.ends[0], &sig.ends[1])
                };
                feats.push(a.feat);
                feats.push(b.feat);
                protected.extend([0, 1]);
                edges.push((0, 1, sig.feat));
                planted_edge = Some(0);
                for (center, end) in [(0usize, a), (1usize, b)] {
                    for &(ef, nf) in &end.neighbors {
                        feats.push(nf);
                        edges.push((center, feats.len() - 1, ef));
                    }
                }
            }
        }
        let motif_nodes = feats.len();
        let mut connected: HashSet<(usize, usize)> =
            edges.iter().map(|&(u, v, _)| (u.min(v), u.max(v))).collect();
        let open = |i: usize, protected: &[usize]| !protected.contains(&i);
        for i in motif_nodes..n {
            feats.push(rng.gen_range(0..cfg.node_vocab));
            let candidates: Vec<usize> = (0..i).filter(|&j| open(j, &protected)).collect();
            let j = *candidates.choose(rng).expect("motif has open periphery");
            edges.push((j, i, rng.gen_range(0..cfg.edge_vocab)));
            connected.insert((j, i));
        }
        let extra = rng.gen_range(0..=n / 4);
        for _ in 0..extra {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let key = (a.min(b), a.max(b));
            if a == b || !open(a, &protected) || !open(b, &protected) || connected.contains(&key) {
                continue;
            }
            connected.insert(key);
            edges.push((key.0, key.1, rng.gen_range(0..cfg.edge_vocab)));
        }

        // Random node relabeling; edges canonicalized and sorted.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut nodes = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = feats[old];
        }
        let planted_key = planted_edge.map(|e: usize| {
            let (u, v, _) = edges[e];
            (perm[u].min(perm[v]), perm[u].max(perm[v]))
        });
        let mut new_edges: Vec<Edge> = edges
            .iter()
            .map(|&(u, v, f)| Edge {
                u: perm[u].min(perm[v]),
                v: perm[u].max(perm[v]),
                feat: f,
            })
            .collect();
        new_edges.sort_by_key(|e| (e.u, e.v));

        let mut r = ReactionRecord {
            nodes,
            edges: new_edges,
            atom_labels: Vec::new(),
            bond_labels: Vec::new(),
            reaction_class: class,
        };
        label(&mut r, motifs);

        let expected_atoms: usize = match template {
            TemplateRef::Atom(_) => 1,
            TemplateRef::Bond(_) => 0,
        };
        let atom_ok = match template {
            TemplateRef::Atom(t) => r.atom_labels[perm[0]] == t,
            TemplateRef::Bond(_) => true,
        };
        let bond_ok = match (template, planted_key) {
            (TemplateRef::Bond(t), Some(key)) => r
                .edges
                .iter()
                .position(|e| (e.u, e.v) == key)
                .is_some_and(|i| r.bond_labels[i] == t),
            _ => true,
        };
        let nonzero_atoms = r.atom_labels.iter().filter(|&&t| t != 0).count();
        let nonzero_bonds = r.bond_labels.iter().filter(|&&t| t != 0).count();
        if atom_ok
            && bond_ok
            && nonzero_atoms == expected_atoms
            && nonzero_bonds == 1 - expected_atoms
        {
            return Ok(r);
        }
    }
    Err(Error::Generation(format!(
        "could not place template {template:?} without collisions after {MAX_ATTEMPTS} attempts"
    )))
}

/// Generates disjoint `(train, val, test)` splits.
pub fn generate_synthetic_with(cfg: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    check_config(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let motifs = sample_motifs(cfg, &mut rng);

    let mut templates: Vec<TemplateRef> = (1..=cfg.n_atom_templates as u32)
        .map(TemplateRef::Atom)
        .chain((1..=cfg.n_bond_templates as u32).map(TemplateRef::Bond))
        .collect();

    // Home reaction class per template, round-robin over a shuffled order so
    // every class owns templates.
    let mut order = templates.clone();
    order.shuffle(&mut rng);
    let home: HashMap<TemplateRef, u8> = order
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, (i % 10) as u8 + 1))
        .collect();

    let n_rare = (cfg.rare_template_fraction * templates.len() as f64).round() as usize;
    templates.shuffle(&mut rng);
    let rare: BTreeSet<TemplateRef> = templates[..n_rare].iter().copied().collect();
    let common: Vec<TemplateRef> = templates[n_rare..].to_vec();
    templates.sort();

    let n_val = (cfg.val_fraction * cfg.n_records as f64).round() as usize;
    let n_test = (cfg.test_fraction * cfg.n_records as f64).round() as usize;
    let n_train = cfg
        .n_records
        .checked_sub(n_val + n_test)
        .ok_or_else(|| Error::Generation("split fractions exceed 1".into()))?;

    let mut train_templates: Vec<TemplateRef> = Vec::with_capacity(n_train);
    for &t in &rare {
        let count = rng.gen_range(1..=RARE_MAX_COUNT);
        train_templates.extend(std::iter::repeat(t).take(count));
    }
    for &t in &common {
        train_templates.extend(std::iter::repeat(t).take(COMMON_MIN_COUNT));
    }
    if train_templates.len() > n_train {
        return Err(Error::Generation(format!(
            "{n_train} training records cannot host the minimum template occurrences ({})",
            train_templates.len()
        )));
    }
    if !common.is_empty() {
        while train_templates.len() < n_train {
            train_templates.push(*common.choose(&mut rng).unwrap());
        }
    } else {
        while train_templates.len() < n_train {
            train_templates.push(*templates.choose(&mut rng).unwrap());
        }
    }
    train_templates.shuffle(&mut rng);

    let mut eval_templates = |n: usize| -> Vec<TemplateRef> {
        (0..n).map(|_| *templates.choose(&mut rng).unwrap()).collect()
    };
    let val_templates = eval_templates(n_val);
    let test_templates = eval_templates(n_test);

    let header = DatasetHeader {
        n_atom_templates: cfg.n_atom_templates,
        n_bond_templates: cfg.n_bond_templates,
        node_vocab: cfg.node_vocab,
        edge_vocab: cfg.edge_vocab,
    };
    let mut make = |ts: &[TemplateRef]| -> Result<Dataset> {
        let records = ts
            .iter()
            .map(|&t| {
                let home_class = home[&t];
                let class = if rng.gen_bool(cfg.class_noise) {
                    let other = rng.gen_range(1..=9u8);
                    if other >= home_class {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    home_class
                };
                build_record(cfg, &motifs, t, class, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(header, records)
    };
    Ok((make(&train_templates)?, make(&val_templates)?, make(&test_templates)?))
}
