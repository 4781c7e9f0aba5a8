//! Nearest-neighbor template distributions, interpolation with the
//! classifier's distributions, and the final ranking of `(site, template)`
//! candidates.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterInput, AdapterParams};
use crate::backbone::{BackboneParams, EmbeddingSet};
use crate::error::{Error, Result};
use crate::graphio::{ReactionRecord, Site};
use crate::scalar::Scalar;
use crate::store::{StoreHit, TemplateStore};

/// Default number of retrieved neighbors per site.
pub const DEFAULT_K: usize = 32;
/// Default length of the ranked output.
pub const DEFAULT_TOP_N: usize = 50;

/// Retrieved `(template, distance)` pairs, ascending by distance.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList<S> {
    pub entries: Vec<(u32, S)>,
}

impl<S: Scalar> NeighborList<S> {
    pub fn new(mut entries: Vec<(u32, S)>) -> Self {
        entries.sort_by(|a, b| {
            a.1.to_f64_lossless()
                .total_cmp(&b.1.to_f64_lossless())
                .then(a.0.cmp(&b.0))
        });
        Self { entries }
    }

    pub fn from_hits(hits: &[StoreHit]) -> Self {
        Self {
            entries: hits
                .iter()
                .map(|h| (h.template, S::of(h.distance as f64).max(S::zero())))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distances(&self) -> Vec<S> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

/// `P(t) ∝ Σ_{i: t_i = t} exp(-d_i / temperature)` over templates `0..=n_templates`.
///
/// Weights are computed relative to the smallest distance, which leaves the
/// normalized distribution unchanged.
pub fn knn_distribution<S: Scalar>(
    neighbors: &NeighborList<S>,
    temperature: S,
    n_templates: usize,
) -> Result<Vec<S>> {
    if neighbors.is_empty() {
        return Err(Error::Retrieval("empty neighbor list".into()));
    }
    if !(temperature > S::zero()) || !temperature.is_finite() {
        return Err(Error::Retrieval(format!("invalid temperature {temperature}")));
    }
    let d_min = neighbors
        .entries
        .iter()
        .map(|e| e.1)
        .fold(S::infinity(), |a, b| a.min(b));
    let mut p = vec![S::zero(); n_templates + 1];
    let mut total = S::zero();
    for &(t, d) in &neighbors.entries {
        if !d.is_finite() || d < S::zero() {
            return Err(Error::Retrieval(format!("invalid distance {d}")));
        }
        let slot = p
            .get_mut(t as usize)
            .ok_or_else(|| Error::Retrieval(format!("template {t} outside 0..={n_templates}")))?;
        let w = (-(d - d_min) / temperature).exp();
        *slot = *slot + w;
        total = total + w;
    }
    for v in p.iter_mut() {
        *v = *v / total;
    }
    Ok(p)
}

/// `λ · p_gnn + (1 − λ) · p_knn`
pub fn interpolate<S: Scalar>(p_gnn: &[S], p_knn: &[S], lambda: S) -> Result<Vec<S>> {
    if p_gnn.len() != p_knn.len() {
        return Err(Error::Misaligned(format!(
            "distributions over {} and {} templates",
            p_gnn.len(),
            p_knn.len()
        )));
    }
    Ok(p_gnn
        .iter()
        .zip(p_knn)
        .map(|(&g, &k)| lambda * g + (S::one() - lambda) * k)
        .collect())
}

/// Where per-site temperature and mixing weight come from.
#[derive(Clone, Copy, Debug)]
pub enum Fusion<'a, S> {
    Fixed { temperature: S, lambda: S },
    Adaptive(&'a AdapterParams<S>),
}

/// Everything inference needs about one graph once the backbone and stores
/// have been queried.
#[derive(Clone, Debug)]
pub struct RecordContext<S> {
    pub embeddings: EmbeddingSet<S>,
    /// `(min, max)` endpoints per edge.
    pub edge_ends: Vec<(usize, usize)>,
    pub atom_gnn: Vec<Vec<S>>,
    pub bond_gnn: Vec<Vec<S>>,
    pub atom_neighbors: Vec<NeighborList<S>>,
    pub bond_neighbors: Vec<NeighborList<S>>,
    pub atom_labels: Vec<u32>,
    pub bond_labels: Vec<u32>,
    pub n_atom_templates: usize,
    pub n_bond_templates: usize,
}

fn to_key<S: Scalar>(h: &[S]) -> Vec<f32> {
    h.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()
}

impl<S: Scalar> RecordContext<S> {
    pub fn build(
        g: &ReactionRecord,
        backbone: &BackboneParams<S>,
        atom_store: &TemplateStore,
        bond_store: &TemplateStore,
        k: usize,
    ) -> Result<Self> {
        let h = backbone.config.hidden;
        if atom_store.dim != h || bond_store.dim != h {
            return Err(Error::Config(format!(
                "store dimensions ({}, {}) differ from backbone hidden size {h}",
                atom_store.dim, bond_store.dim
            )));
        }
        let embeddings = backbone.encode(g)?;
        let (atom_gnn, bond_gnn) = backbone.head_probs(&embeddings)?;
        let atom_neighbors = embeddings
            .nodes
            .iter()
            .map(|x| Ok(NeighborList::from_hits(&atom_store.search(&to_key(x), k)?)))
            .collect::<Result<Vec<_>>>()?;
        let bond_neighbors = embeddings
            .edges
            .iter()
            .map(|x| Ok(NeighborList::from_hits(&bond_store.search(&to_key(x), k)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            edge_ends: g.edges.iter().map(|e| e.canonical()).collect(),
            embeddings,
            atom_gnn,
            bond_gnn,
            atom_neighbors,
            bond_neighbors,
            atom_labels: g.atom_labels.clone(),
            bond_labels: g.bond_labels.clone(),
            n_atom_templates: backbone.config.n_atom_templates,
            n_bond_templates: backbone.config.n_bond_templates,
        })
    }

    pub fn adapter_input(&self) -> AdapterInput<'_, S> {
        AdapterInput {
            nodes: &self.embeddings.nodes,
            edges: &self.embeddings.edges,
            edge_ends: &self.edge_ends,
            atom_neighbors: &self.atom_neighbors,
            bond_neighbors: &self.bond_neighbors,
        }
    }

    /// `(temperature, λ)` for every atom and every bond.
    pub fn site_params(&self, fusion: &Fusion<'_, S>) -> Result<(Vec<(S, S)>, Vec<(S, S)>)> {
        match fusion {
            Fusion::Fixed { temperature, lambda } => Ok((
                vec![(*temperature, *lambda); self.atom_gnn.len()],
                vec![(*temperature, *lambda); self.bond_gnn.len()],
            )),
            Fusion::Adaptive(a) => {
                let out = a.forward(&self.adapter_input())?;
                Ok((
                    out.atoms.iter().map(|s| (s.temperature, s.lambda)).collect(),
                    out.bonds.iter().map(|s| (s.temperature, s.lambda)).collect(),
                ))
            }
        }
    }

    /// Mixed distributions for every atom and bond. A site without retrieved
    /// neighbors keeps its classifier distribution.
    pub fn fused(&self, fusion: &Fusion<'_, S>) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
        let (ap, bp) = self.site_params(fusion)?;
        let mix = |gnn: &[Vec<S>], nbrs: &[NeighborList<S>], params: &[(S, S)], n_t: usize| {
            gnn.iter()
                .zip(nbrs)
                .zip(params)
                .map(|((p, n), &(t, l))| {
                    if n.is_empty() {
                        Ok(p.clone())
                    } else {
                        interpolate(p, &knn_distribution(n, t, n_t)?, l)
                    }
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok((
            mix(&self.atom_gnn, &self.atom_neighbors, &ap, self.n_atom_templates)?,
            mix(&self.bond_gnn, &self.bond_neighbors, &bp, self.n_bond_templates)?,
        ))
    }

    /// `-(1/|V|) Σ_a ln P(t̂_a) - (1/|E|) Σ_b ln P(t̂_b)` under `fusion`.
    pub fn fused_loss(&self, fusion: &Fusion<'_, S>) -> Result<S> {
        let (a, b) = self.fused(fusion)?;
        let term = |dists: &[Vec<S>], labels: &[u32]| -> Result<S> {
            if dists.is_empty() {
                return Ok(S::zero());
            }
            let mut s = S::zero();
            for (d, &t) in dists.iter().zip(labels) {
                let p = *d
                    .get(t as usize)
                    .ok_or_else(|| Error::Retrieval(format!("label {t} outside the template set")))?;
                s = s - p.ln();
            }
            Ok(s / S::of(dists.len() as f64))
        };
        Ok(term(&a, &self.atom_labels)? + term(&b, &self.bond_labels)?)
    }

    pub fn predict(&self, fusion: &Fusion<'_, S>, top_n: usize) -> Result<RankedPrediction> {
        let (a, b) = self.fused(fusion)?;
        Ok(rank(&a, &b, top_n))
    }

    /// Ranking from the classifier alone.
    pub fn predict_gnn_only(&self, top_n: usize) -> RankedPrediction {
        rank(&self.atom_gnn, &self.bond_gnn, top_n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub site: Site,
    pub template: u32,
    pub prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    #[serde(rename = "ranked")]
    pub entries: Vec<RankedEntry>,
}

impl RankedPrediction {
    /// One JSON object; probabilities carry 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let mut s = String::from("{\"ranked\":[");
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let (kind, index) = match e.site {
                Site::Atom(i) => ("atom", i),
                Site::Bond(i) => ("bond", i),
            };
            let _ = write!(
                s,
                "{{\"site\":{{\"kind\":\"{kind}\",\"index\":{index}}},\"template\":{},\"prob\":{:.16e}}}",
                e.template, e.prob
            );
        }
        s.push_str("]}");
        s
    }
}

pub fn write_predictions(preds: &[RankedPrediction], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&p.to_json_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<RankedPrediction>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Pools every nonzero template with positive probability across atoms and
/// bonds, sorted by descending probability; ties go to atoms before bonds,
/// then lower site index, then lower template id.
pub fn rank<S: Scalar>(atoms: &[Vec<S>], bonds: &[Vec<S>], top_n: usize) -> RankedPrediction {
    let mut cands: Vec<RankedEntry> = Vec::new();
    let sites = atoms
        .iter()
        .enumerate()
        .map(|(i, d)| (Site::Atom(i), d))
        .chain(bonds.iter().enumerate().map(|(i, d)| (Site::Bond(i), d)));
    for (site, dist) in sites {
        for (t, &p) in dist.iter().enumerate().skip(1) {
            let prob = p.to_f64_lossless();
            if prob > 0.0 {
                cands.push(RankedEntry {
                    site,
                    template: t as u32,
                    prob,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.prob
            .total_cmp(&a.prob)
            .then(a.site.cmp(&b.site))
            .then(a.template.cmp(&b.template))
    });
    cands.truncate(top_n);
    RankedPrediction { entries: cands }
}

/// End-to-end prediction for one graph.
pub fn predict_topk<S: Scalar>(
    g: &ReactionRecord,
    backbone: &BackboneParams<S>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    fusion: &Fusion<'_, S>,
    k_neighbors: usize,
    top_n: usize,
) -> Result<RankedPrediction> {
    RecordContext::build(g, backbone, atom_store, bond_store, k_neighbors)?.predict(fusion, top_n)
}

/// Classifier-only prediction; no retrieval is performed.
pub fn predict_gnn_only<S: Scalar>(
    g: &ReactionRecord,
    backbone: &BackboneParams<S>,
    top_n: usize,
) -> Result<RankedPrediction> {
    let emb = backbone.encode(g)?;
    let (a, b) = backbone.head_probs(&emb)?;
    Ok(rank(&a, &b, top_n))
}
