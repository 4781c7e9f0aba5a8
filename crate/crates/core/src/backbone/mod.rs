//! Message-passing encoder with atom and bond classification heads.
//!
//! Node states start from the one-hot node feature and are refined by
//! `layers` rounds of
//!
//! ```text
//! h_v' = ReLU(W_s h_v + b_s + Σ_{(u,e) ∈ N(v)} ReLU(W_m [h_u ‖ x_e] + b_m))
//! ```
//!
//! where `x_e` is the one-hot edge feature. Edge states are
//! `h_e = ReLU(W_e [h_u + h_v ‖ x_e] + b_e)`, so they do not depend on
//! endpoint order. Each head is two dense layers with a ReLU in between,
//! followed by a softmax whose class 0 is "no template".
//!
//! Checkpoint layout (little-endian): `"RKBB" | version u32 | layers, hidden,
//! node_vocab, edge_vocab, n_atom_templates, n_bond_templates (u32 each)`,
//! then every tensor as f64 in [`ParamSet::tensors`] order: for each layer
//! `W_s, b_s, W_m, b_m`; then `W_e, b_e`; atom head `W1, b1, W2, b2`; bond
//! head `W1, b1, W2, b2`. Matrices are row-major.

mod train;

pub use train::{dataset_loss, train_backbone, BackboneTrainConfig, EpochStats, TrainOutcome};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::graphio::{DatasetHeader, ReactionRecord};
pub use crate::linalg::Dense;
use crate::linalg::{add_assign, one_hot, relu_backward, softmax};
#[cfg(test)]
use crate::linalg::Matrix;
use crate::optim::ParamSet;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RKBB";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub hidden: usize,
    pub node_vocab: usize,
    pub edge_vocab: usize,
    pub n_atom_templates: usize,
    pub n_bond_templates: usize,
}

impl BackboneConfig {
    pub fn for_dataset(header: &DatasetHeader, layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden,
            node_vocab: header.node_vocab,
            edge_vocab: header.edge_vocab,
            n_atom_templates: header.n_atom_templates,
            n_bond_templates: header.n_bond_templates,
        }
    }

    pub fn matches(&self, header: &DatasetHeader) -> bool {
        self.node_vocab == header.node_vocab
            && self.edge_vocab == header.edge_vocab
            && self.n_atom_templates == header.n_atom_templates
            && self.n_bond_templates == header.n_bond_templates
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.node_vocab
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MessageLayer<S> {
    pub self_map: Dense<S>,
    pub message: Dense<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<S> {
    pub hidden: Dense<S>,
    pub out: Dense<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams<S> {
    pub config: BackboneConfig,
    pub layers: Vec<MessageLayer<S>>,
    pub edge_proj: Dense<S>,
    pub atom_head: Head<S>,
    pub bond_head: Head<S>,
}

/// Hidden representations of every node and edge of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet<S> {
    pub nodes: Vec<Vec<S>>,
    pub edges: Vec<Vec<S>>,
}

impl<S: Scalar> ParamSet<S> for BackboneParams<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = Vec::new();
        for l in &self.layers {
            out.extend([
                &l.self_map.w.data[..],
                &l.self_map.b[..],
                &l.message.w.data[..],
                &l.message.b[..],
            ]);
        }
        out.extend([&self.edge_proj.w.data[..], &self.edge_proj.b[..]]);
        for h in [&self.atom_head, &self.bond_head] {
            out.extend([&h.hidden.w.data[..], &h.hidden.b[..], &h.out.w.data[..], &h.out.b[..]]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.self_map.w.data);
            out.push(&mut l.self_map.b);
            out.push(&mut l.message.w.data);
            out.push(&mut l.message.b);
        }
        out.push(&mut self.edge_proj.w.data);
        out.push(&mut self.edge_proj.b);
        for h in [&mut self.atom_head, &mut self.bond_head] {
            out.push(&mut h.hidden.w.data);
            out.push(&mut h.hidden.b);
            out.push(&mut h.out.w.data);
            out.push(&mut h.out.b);
        }
        out
    }
}

/// Per-site dropout with inverted scaling.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    fn mask<S: Scalar>(&mut self, n: usize) -> Vec<S> {
        let keep = S::of(1.0 / (1.0 - self.p));
        (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.p { S::zero() } else { keep })
            .collect()
    }
}

struct HeadCache<S> {
    pre: Vec<S>,
    /// Post-ReLU, post-dropout hidden activation.
    act: Vec<S>,
    mask: Option<Vec<S>>,
    probs: Vec<S>,
}

struct LayerCache<S> {
    /// Pre-activation per node.
    pre: Vec<Vec<S>>,
    mask: Option<Vec<Vec<S>>>,
    /// Concatenated `[h_sender ‖ x_e]` per directed message (2e: u→v, 2e+1: v→u).
    msg_in: Vec<Vec<S>>,
    msg_pre: Vec<Vec<S>>,
}

struct ForwardCache<S> {
    /// `states[l]` is the input to layer `l`; `states[layers]` is the final node embedding.
    states: Vec<Vec<Vec<S>>>,
    layers: Vec<LayerCache<S>>,
    edge_in: Vec<Vec<S>>,
    edge_pre: Vec<Vec<S>>,
    edges: Vec<Vec<S>>,
}

fn concat<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl<S: Scalar> Head<S> {
    fn forward(&self, x: &[S], dropout: &mut Option<Dropout<'_>>) -> HeadCache<S> {
        let pre = self.hidden.forward(x);
        let mut act: Vec<S> = pre.iter().map(|v| v.relu()).collect();
        let mask = dropout.as_mut().map(|d| d.mask::<S>(act.len()));
        if let Some(m) = &mask {
            for (a, &k) in act.iter_mut().zip(m) {
                *a = *a * k;
            }
        }
        let probs = softmax(&self.out.forward(&act));
        HeadCache { pre, act, mask, probs }
    }

    /// Backpropagates logit gradient `g_logits`, adding `∂/∂x` into `g_x`.
    fn backward(&self, x: &[S], c: &HeadCache<S>, g_logits: &[S], grad: &mut Head<S>, g_x: &mut [S]) {
        let mut g_act = vec![S::zero(); c.act.len()];
        self.out.backward(&c.act, g_logits, &mut grad.out, Some(&mut g_act));
        if let Some(m) = &c.mask {
            for (g, &k) in g_act.iter_mut().zip(m) {
                *g = *g * k;
            }
        }
        relu_backward(&c.pre, &mut g_act);
        self.hidden.backward(x, &g_act, &mut grad.hidden, Some(g_x));
    }
}

impl<S: Scalar> BackboneParams<S> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(Error::Config("backbone needs at least one layer and a positive hidden size".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let ve = config.edge_vocab;
        let layers = (0..config.layers)
            .map(|l| {
                let d_in = config.layer_input(l);
                MessageLayer {
                    self_map: Dense::glorot(h, d_in, &mut rng),
                    message: Dense::glorot(h, d_in + ve, &mut rng),
                }
            })
            .collect();
        let edge_proj = Dense::glorot(h, h + ve, &mut rng);
        let mut head = |n_out: usize| Head {
            hidden: Dense::glorot(h, h, &mut rng),
            out: Dense::glorot(n_out, h, &mut rng),
        };
        let atom_head = head(config.n_atom_templates + 1);
        let bond_head = head(config.n_bond_templates + 1);
        Ok(Self {
            config,
            layers,
            edge_proj,
            atom_head,
            bond_head,
        })
    }

    pub fn zeros(config: BackboneConfig) -> Result<Self> {
        Ok(Self::init(config, 0)?.zeros_like())
    }

    fn check_record(&self, g: &ReactionRecord) -> Result<()> {
        let c = &self.config;
        if let Some(f) = g.nodes.iter().find(|&&f| f >= c.node_vocab) {
            return Err(Error::Config(format!("node feature {f} outside backbone vocabulary {}", c.node_vocab)));
        }
        if let Some(e) = g.edges.iter().find(|e| e.feat >= c.edge_vocab) {
            return Err(Error::Config(format!(
                "edge feature {} outside backbone vocabulary {}",
                e.feat, c.edge_vocab
            )));
        }
        if let Some(e) = g.edges.iter().find(|e| e.u >= g.nodes.len() || e.v >= g.nodes.len()) {
            return Err(Error::Config(format!("edge ({}, {}) out of range", e.u, e.v)));
        }
        Ok(())
    }

    fn forward_cache<'d>(
        &self,
        g: &ReactionRecord,
        mut dropout: Option<Dropout<'d>>,
    ) -> Result<(ForwardCache<S>, Option<Dropout<'d>>)> {
        self.check_record(g)?;
        let c = &self.config;
        let n = g.nodes.len();
        let edge_x: Vec<Vec<S>> = g.edges.iter().map(|e| one_hot(e.feat, c.edge_vocab)).collect();
        let adj = g.adjacency();

        let mut states: Vec<Vec<Vec<S>>> = Vec::with_capacity(c.layers + 1);
        states.push(g.nodes.iter().map(|&f| one_hot(f, c.node_vocab)).collect());
        let mut layers = Vec::with_capacity(c.layers);
        for layer in &self.layers {
            let h = states.last().unwrap();
            let mut msg_in = Vec::with_capacity(2 * g.edges.len());
            let mut msg_pre = Vec::with_capacity(2 * g.edges.len());
            let mut msg_out = Vec::with_capacity(2 * g.edges.len());
            for (e, edge) in g.edges.iter().enumerate() {
                for sender in [edge.u, edge.v] {
                    let z = concat(&h[sender], &edge_x[e]);
                    let a = layer.message.forward(&z);
                    msg_out.push(a.iter().map(|v| v.relu()).collect::<Vec<S>>());
                    msg_in.push(z);
                    msg_pre.push(a);
                }
            }
            let mut pre = Vec::with_capacity(n);
            for v in 0..n {
                let mut s = layer.self_map.forward(&h[v]);
                for &(u, e) in &adj[v] {
                    let k = if g.edges[e].u == u { 2 * e } else { 2 * e + 1 };
                    add_assign(&mut s, &msg_out[k]);
                }
                pre.push(s);
            }
            let mut next: Vec<Vec<S>> = pre.iter().map(|s| s.iter().map(|v| v.relu()).collect()).collect();
            let mask = dropout.as_mut().map(|d| {
                (0..n).map(|_| d.mask::<S>(c.hidden)).collect::<Vec<Vec<S>>>()
            });
            if let Some(m) = &mask {
                for (x, mv) in next.iter_mut().zip(m) {
                    for (a, &k) in x.iter_mut().zip(mv) {
                        *a = *a * k;
                    }
                }
            }
            layers.push(LayerCache {
                pre,
                mask,
                msg_in,
                msg_pre,
            });
            states.push(next);
        }

        let last = states.last().unwrap();
        let mut edge_in = Vec::with_capacity(g.edges.len());
        let mut edge_pre = Vec::with_capacity(g.edges.len());
        let mut edges = Vec::with_capacity(g.edges.len());
        for (e, edge) in g.edges.iter().enumerate() {
            let sum: Vec<S> = last[edge.u].iter().zip(&last[edge.v]).map(|(&a, &b)| a + b).collect();
            let z = concat(&sum, &edge_x[e]);
            let a = self.edge_proj.forward(&z);
            edges.push(a.iter().map(|v| v.relu()).collect());
            edge_in.push(z);
            edge_pre.push(a);
        }
        Ok((
            ForwardCache {
                states,
                layers,
                edge_in,
                edge_pre,
                edges,
            },
            dropout,
        ))
    }

    /// Node and edge embeddings (inference mode, no dropout).
    pub fn encode(&self, g: &ReactionRecord) -> Result<EmbeddingSet<S>> {
        let (cache, _) = self.forward_cache(g, None)?;
        let ForwardCache { mut states, edges, .. } = cache;
        Ok(EmbeddingSet {
            nodes: states.pop().unwrap(),
            edges,
        })
    }

    /// Per-node distributions over `n_atom_templates + 1` classes and per-edge
    /// distributions over `n_bond_templates + 1` classes.
    pub fn head_probs(&self, emb: &EmbeddingSet<S>) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
        let h = self.config.hidden;
        if emb.nodes.iter().chain(&emb.edges).any(|x| x.len() != h) {
            return Err(Error::Config(format!("embedding dimension differs from hidden size {h}")));
        }
        let atoms = emb
            .nodes
            .iter()
            .map(|x| self.atom_head.forward(x, &mut None).probs)
            .collect();
        let bonds = emb
            .edges
            .iter()
            .map(|x| self.bond_head.forward(x, &mut None).probs)
            .collect();
        Ok((atoms, bonds))
    }

    /// Per-record classification loss, with gradients accumulated into `grad`
    /// scaled by `weight`.
    pub fn record_loss_and_grads(
        &self,
        g: &ReactionRecord,
        weight: S,
        grad: &mut BackboneParams<S>,
        dropout: Option<Dropout<'_>>,
    ) -> Result<S> {
        let (cache, mut dropout) = self.forward_cache(g, dropout)?;
        let c = &self.config;
        let n = g.nodes.len();
        let m = g.edges.len();
        let h = c.hidden;
        let final_states = &cache.states[c.layers];
        let mut loss = S::zero();
        let mut g_h: Vec<Vec<S>> = vec![vec![S::zero(); h]; n];

        if n > 0 {
            let w_site = S::one() / S::of(n as f64);
            for v in 0..n {
                let hc = self.atom_head.forward(&final_states[v], &mut dropout);
                let t = g.atom_labels[v] as usize;
                loss = loss - w_site * hc.probs[t].ln();
                let mut g_logits: Vec<S> = hc.probs.iter().map(|&p| p * w_site * weight).collect();
                g_logits[t] = g_logits[t] - w_site * weight;
                self.atom_head
                    .backward(&final_states[v], &hc, &g_logits, &mut grad.atom_head, &mut g_h[v]);
            }
        }
        if m > 0 {
            let w_site = S::one() / S::of(m as f64);
            for (e, edge) in g.edges.iter().enumerate() {
                let x = &cache.edges[e];
                let hc = self.bond_head.forward(x, &mut dropout);
                let t = g.bond_labels[e] as usize;
                loss = loss - w_site * hc.probs[t].ln();
                let mut g_logits: Vec<S> = hc.probs.iter().map(|&p| p * w_site * weight).collect();
                g_logits[t] = g_logits[t] - w_site * weight;
                let mut g_edge = vec![S::zero(); h];
                self.bond_head.backward(x, &hc, &g_logits, &mut grad.bond_head, &mut g_edge);
                relu_backward(&cache.edge_pre[e], &mut g_edge);
                let mut g_z = vec![S::zero(); h + c.edge_vocab];
                self.edge_proj
                    .backward(&cache.edge_in[e], &g_edge, &mut grad.edge_proj, Some(&mut g_z));
                add_assign(&mut g_h[edge.u], &g_z[..h]);
                add_assign(&mut g_h[edge.v], &g_z[..h]);
            }
        }

        let adj = g.adjacency();
        for l in (0..c.layers).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let lgrad = &mut grad.layers[l];
            let inputs = &cache.states[l];
            let d_in = c.layer_input(l);
            let need_input_grad = l > 0;
            let mut g_prev: Vec<Vec<S>> = if need_input_grad {
                vec![vec![S::zero(); d_in]; n]
            } else {
                Vec::new()
            };
            for v in 0..n {
                let mut g_pre = std::mem::take(&mut g_h[v]);
                if let Some(mask) = &lc.mask {
                    for (gv, &k) in g_pre.iter_mut().zip(&mask[v]) {
                        *gv = *gv * k;
                    }
                }
                relu_backward(&lc.pre[v], &mut g_pre);
                layer.self_map.backward(
                    &inputs[v],
                    &g_pre,
                    &mut lgrad.self_map,
                    if need_input_grad { Some(&mut g_prev[v]) } else { None },
                );
                for &(u, e) in &adj[v] {
                    let k = if g.edges[e].u == u { 2 * e } else { 2 * e + 1 };
                    let mut g_a = g_pre.clone();
                    relu_backward(&lc.msg_pre[k], &mut g_a);
                    if need_input_grad {
                        let mut g_z = vec![S::zero(); d_in + c.edge_vocab];
                        layer.message.backward(&lc.msg_in[k], &g_a, &mut lgrad.message, Some(&mut g_z));
                        add_assign(&mut g_prev[u], &g_z[..d_in]);
                    } else {
                        layer.message.backward(&lc.msg_in[k], &g_a, &mut lgrad.message, None);
                    }
                }
            }
            if need_input_grad {
                g_h = g_prev;
            }
        }
        Ok(loss)
    }

    /// Mean per-record loss over `batch` and its exact gradient (no dropout).
    pub fn loss_and_grads(&self, batch: &[ReactionRecord]) -> Result<(S, BackboneParams<S>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let mut grad = self.zeros_like();
        let w = S::one() / S::of(batch.len() as f64);
        let mut total = S::zero();
        for r in batch {
            total = total + self.record_loss_and_grads(r, w, &mut grad, None)?;
        }
        Ok((total * w, grad))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let c = &self.config;
        for v in [c.layers, c.hidden, c.node_vocab, c.edge_vocab, c.n_atom_templates, c.n_bond_templates] {
            w.u32(v as u32);
        }
        for t in self.tensors() {
            w.f64s(t.iter().map(|v| v.to_f64_lossless()));
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let mut cfg = [0usize; 6];
        for v in cfg.iter_mut() {
            *v = r.u32()? as usize;
        }
        let config = BackboneConfig {
            layers: cfg[0],
            hidden: cfg[1],
            node_vocab: cfg[2],
            edge_vocab: cfg[3],
            n_atom_templates: cfg[4],
            n_bond_templates: cfg[5],
        };
        let mut params = Self::zeros(config).map_err(|e| Error::Format(e.to_string()))?;
        for t in params.tensors_mut() {
            let vals = r.f64s(t.len())?;
            for (x, v) in t.iter_mut().zip(vals) {
                *x = S::of(v);
            }
        }
        r.finish()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
