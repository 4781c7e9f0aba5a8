//! Per-site temperature and mixing weight from a one-layer GIN over the
//! frozen backbone states plus dense projections of the neighbor distances.
//!
//! Atom path: `g_v = W_vg((1+ε)h_v + Σ_e ReLU(h_v + h_e)) + b_vg`,
//! `k_v = W_vk d + b_vk`, `o_v = ReLU(W_vo ReLU(g_v ‖ k_v) + b_vo)`,
//! `T = clamp(w_ta·o_v + b_ta, 1, 100)`, `λ = σ(w_la·o_v + b_la)`. Bonds use
//! `ReLU(g_s ‖ g_t ‖ k_e)` with `(s, t)` the edge's `(min, max)` endpoints.
//!
//! Checkpoint layout (little-endian): `"RKAD" | version u32 | hidden u32 |
//! k u32 | f64 tensors` in the order `ε, gin, atom_dist, bond_dist, atom_mix,
//! bond_mix, atom_temp, atom_lambda, bond_temp, bond_lambda`, each dense
//! layer as weights (row-major) then bias.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::graphio::{Dataset, ReactionRecord};
use crate::linalg::{dot, relu_backward, relu_vec, Dense};
use crate::optim::{Adam, AdamConfig, ParamSet};
use crate::retrieve::{NeighborList, RecordContext};
use crate::scalar::Scalar;
use crate::store::TemplateStore;

const MAGIC: &[u8; 4] = b"RKAD";
const VERSION: u32 = 1;

pub const MIN_TEMPERATURE: f64 = 1.0;
pub const MAX_TEMPERATURE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub hidden: usize,
    /// Length of the distance vector.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams<S> {
    pub config: AdapterConfig,
    pub eps: S,
    pub gin: Dense<S>,
    pub atom_dist: Dense<S>,
    pub bond_dist: Dense<S>,
    pub atom_mix: Dense<S>,
    pub bond_mix: Dense<S>,
    pub atom_temp: Dense<S>,
    pub atom_lambda: Dense<S>,
    pub bond_temp: Dense<S>,
    pub bond_lambda: Dense<S>,
}

impl<S: Scalar> ParamSet<S> for AdapterParams<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = vec![std::slice::from_ref(&self.eps)];
        for d in self.dense() {
            out.push(&d.w.data);
            out.push(&d.b);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = vec![std::slice::from_mut(&mut self.eps)];
        for d in [
            &mut self.gin,
            &mut self.atom_dist,
            &mut self.bond_dist,
            &mut self.atom_mix,
            &mut self.bond_mix,
            &mut self.atom_temp,
            &mut self.atom_lambda,
            &mut self.bond_temp,
            &mut self.bond_lambda,
        ] {
            out.push(&mut d.w.data);
            out.push(&mut d.b);
        }
        out
    }
}

/// Borrowed per-graph inputs.
#[derive(Clone, Copy, Debug)]
pub struct AdapterInput<'a, S> {
    pub nodes: &'a [Vec<S>],
    pub edges: &'a [Vec<S>],
    /// `(min, max)` endpoints per edge.
    pub edge_ends: &'a [(usize, usize)],
    pub atom_neighbors: &'a [NeighborList<S>],
    pub bond_neighbors: &'a [NeighborList<S>],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteFusion<S> {
    pub temperature: S,
    pub lambda: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterOutput<S> {
    pub atoms: Vec<SiteFusion<S>>,
    pub bonds: Vec<SiteFusion<S>>,
}

/// Which site a prediction is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Atom,
    Bond,
}

struct SiteCache<S> {
    dist: Vec<S>,
    z: Vec<S>,
    u: Vec<S>,
    o: Vec<S>,
    t_pre: S,
    l_pre: S,
}

struct GraphCache<S> {
    agg: Vec<Vec<S>>,
    g: Vec<Vec<S>>,
    atoms: Vec<SiteCache<S>>,
    bonds: Vec<SiteCache<S>>,
}

fn clamp_temperature<S: Scalar>(t: S) -> S {
    t.max(S::of(MIN_TEMPERATURE)).min(S::of(MAX_TEMPERATURE))
}

fn temperature_slope<S: Scalar>(t_pre: S) -> S {
    if t_pre >= S::of(MIN_TEMPERATURE) && t_pre <= S::of(MAX_TEMPERATURE) {
        S::one()
    } else {
        S::zero()
    }
}

/// Distance vector of length `k`: the retrieved distances in ascending order,
/// padded with the last one when fewer than `k` neighbors exist.
pub fn distance_features<S: Scalar>(n: &NeighborList<S>, k: usize) -> Vec<S> {
    let mut d: Vec<S> = n.entries.iter().take(k).map(|e| e.1).collect();
    let last = d.last().copied().unwrap_or_else(S::zero);
    d.resize(k, last);
    d
}

/// `W_vg((1+ε)h_v + Σ_e ReLU(h_v + h_e)) + b_vg`
pub fn gin_forward<S: Scalar>(h_v: &[S], incident: &[&[S]], p: &AdapterParams<S>) -> Vec<S> {
    p.gin.forward(&gin_aggregate(h_v, incident, p.eps))
}

fn gin_aggregate<S: Scalar>(h_v: &[S], incident: &[&[S]], eps: S) -> Vec<S> {
    let mut agg: Vec<S> = h_v.iter().map(|&x| (S::one() + eps) * x).collect();
    for h_e in incident {
        for ((a, &x), &e) in agg.iter_mut().zip(h_v).zip(h_e.iter()) {
            *a = *a + (x + e).relu();
        }
    }
    agg
}

impl<S: Scalar> AdapterParams<S> {
    pub fn zeros(config: AdapterConfig) -> Result<Self> {
        if config.hidden == 0 || config.k == 0 {
            return Err(Error::Config("adapter hidden size and k must be positive".into()));
        }
        let (h, k) = (config.hidden, config.k);
        Ok(Self {
            config,
            eps: S::zero(),
            gin: Dense::zeros(h, h),
            atom_dist: Dense::zeros(h, k),
            bond_dist: Dense::zeros(h, k),
            atom_mix: Dense::zeros(h, 2 * h),
            bond_mix: Dense::zeros(h, 3 * h),
            atom_temp: Dense::zeros(1, h),
            atom_lambda: Dense::zeros(1, h),
            bond_temp: Dense::zeros(1, h),
            bond_lambda: Dense::zeros(1, h),
        })
    }

    /// Glorot-uniform weights, zero biases and `ε = 0`, except that both
    /// mixing-weight biases start at `+1` and both temperature biases at
    /// `temperature_bias`.
    pub fn init(config: AdapterConfig, temperature_bias: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, k) = (config.hidden, config.k);
        p.gin = Dense::glorot(h, h, &mut rng);
        p.atom_dist = Dense::glorot(h, k, &mut rng);
        p.bond_dist = Dense::glorot(h, k, &mut rng);
        p.atom_mix = Dense::glorot(h, 2 * h, &mut rng);
        p.bond_mix = Dense::glorot(h, 3 * h, &mut rng);
        p.atom_temp = Dense::glorot(1, h, &mut rng);
        p.atom_lambda = Dense::glorot(1, h, &mut rng);
        p.bond_temp = Dense::glorot(1, h, &mut rng);
        p.bond_lambda = Dense::glorot(1, h, &mut rng);
        p.atom_lambda.b[0] = S::one();
        p.bond_lambda.b[0] = S::one();
        p.atom_temp.b[0] = S::of(temperature_bias);
        p.bond_temp.b[0] = S::of(temperature_bias);
        Ok(p)
    }

    fn dense(&self) -> [&Dense<S>; 9] {
        [
            &self.gin,
            &self.atom_dist,
            &self.bond_dist,
            &self.atom_mix,
            &self.bond_mix,
            &self.atom_temp,
            &self.atom_lambda,
            &self.bond_temp,
            &self.bond_lambda,
        ]
    }

    /// `(T, λ)` for one site. `gin_parts` holds `[g_v]` for an atom and
    /// `[g_s, g_t]` for a bond.
    pub fn site_forward(&self, kind: SiteKind, gin_parts: &[&[S]], distances: &[S]) -> Result<SiteFusion<S>> {
        let c = self.site_cache(kind, gin_parts, distances)?;
        Ok(SiteFusion {
            temperature: clamp_temperature(c.t_pre),
            lambda: c.l_pre.sigmoid(),
        })
    }

    fn site_cache(&self, kind: SiteKind, gin_parts: &[&[S]], distances: &[S]) -> Result<SiteCache<S>> {
        let h = self.config.hidden;
        if distances.len() != self.config.k {
            return Err(Error::Config(format!(
                "adapter expects {} distances, got {}",
                self.config.k,
                distances.len()
            )));
        }
        let want = match kind {
            SiteKind::Atom => 1,
            SiteKind::Bond => 2,
        };
        if gin_parts.len() != want || gin_parts.iter().any(|g| g.len() != h) {
            return Err(Error::Config(format!("adapter expects {want} hidden states of size {h}")));
        }
        let (dist_l, mix, temp, lam) = match kind {
            SiteKind::Atom => (&self.atom_dist, &self.atom_mix, &self.atom_temp, &self.atom_lambda),
            SiteKind::Bond => (&self.bond_dist, &self.bond_mix, &self.bond_temp, &self.bond_lambda),
        };
        let mut z: Vec<S> = Vec::with_capacity((want + 1) * h);
        for g in gin_parts {
            z.extend_from_slice(g);
        }
        z.extend(dist_l.forward(distances));
        let u = mix.forward(&relu_vec(&z));
        let o = relu_vec(&u);
        let t_pre = temp.forward(&o)[0];
        let l_pre = lam.forward(&o)[0];
        Ok(SiteCache {
            dist: distances.to_vec(),
            z,
            u,
            o,
            t_pre,
            l_pre,
        })
    }

    fn check_input(&self, x: &AdapterInput<'_, S>) -> Result<()> {
        let h = self.config.hidden;
        let aligned = x.edges.len() == x.edge_ends.len()
            && x.atom_neighbors.len() == x.nodes.len()
            && x.bond_neighbors.len() == x.edges.len();
        if !aligned {
            return Err(Error::Misaligned("adapter inputs have inconsistent site counts".into()));
        }
        if x.nodes.iter().chain(x.edges).any(|v| v.len() != h) {
            return Err(Error::Config(format!("adapter expects hidden states of size {h}")));
        }
        if x.edge_ends.iter().any(|&(s, t)| s >= x.nodes.len() || t >= x.nodes.len()) {
            return Err(Error::Misaligned("edge endpoint out of range".into()));
        }
        Ok(())
    }

    fn graph_cache(&self, x: &AdapterInput<'_, S>) -> Result<GraphCache<S>> {
        self.check_input(x)?;
        let mut incident: Vec<Vec<&[S]>> = vec![Vec::new(); x.nodes.len()];
        for (e, &(s, t)) in x.edge_ends.iter().enumerate() {
            incident[s].push(&x.edges[e]);
            incident[t].push(&x.edges[e]);
        }
        let agg: Vec<Vec<S>> = x
            .nodes
            .iter()
            .zip(&incident)
            .map(|(h, inc)| gin_aggregate(h, inc, self.eps))
            .collect();
        let g: Vec<Vec<S>> = agg.iter().map(|a| self.gin.forward(a)).collect();
        let k = self.config.k;
        let atoms = g
            .iter()
            .zip(x.atom_neighbors)
            .map(|(gv, n)| self.site_cache(SiteKind::Atom, &[gv], &distance_features(n, k)))
            .collect::<Result<Vec<_>>>()?;
        let bonds = x
            .edge_ends
            .iter()
            .zip(x.bond_neighbors)
            .map(|(&(s, t), n)| self.site_cache(SiteKind::Bond, &[&g[s], &g[t]], &distance_features(n, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphCache { agg, g, atoms, bonds })
    }

    /// `(T, λ)` for every atom and bond of one graph.
    pub fn forward(&self, x: &AdapterInput<'_, S>) -> Result<AdapterOutput<S>> {
        let c = self.graph_cache(x)?;
        let out = |s: &SiteCache<S>| SiteFusion {
            temperature: clamp_temperature(s.t_pre),
            lambda: s.l_pre.sigmoid(),
        };
        Ok(AdapterOutput {
            atoms: c.atoms.iter().map(out).collect(),
            bonds: c.bonds.iter().map(out).collect(),
        })
    }

    /// Classification loss of the fused distributions for one graph; adds
    /// `weight ×` its gradient into `grad`. Returns the unweighted loss.
    pub fn context_loss_and_grads(&self, ctx: &RecordContext<S>, weight: S, grad: &mut Self) -> Result<S> {
        let x = ctx.adapter_input();
        let c = self.graph_cache(&x)?;
        let h = self.config.hidden;
        let mut g_gin: Vec<Vec<S>> = vec![vec![S::zero(); h]; x.nodes.len()];
        let mut loss = S::zero();

        let mut site_pass = |kind: SiteKind, gnn: &[Vec<S>], nbrs: &[NeighborList<S>], labels: &[u32], caches: &[SiteCache<S>]| -> Result<()> {
            if gnn.is_empty() {
                return Ok(());
            }
            let scale = S::one() / S::of(gnn.len() as f64);
            for (i, ((p_gnn, n), (&label, sc))) in gnn.iter().zip(nbrs).zip(labels.iter().zip(caches)).enumerate() {
                let t = label as usize;
                let p = *p_gnn
                    .get(t)
                    .ok_or_else(|| Error::Retrieval(format!("label {label} outside the template set")))?;
                if n.is_empty() {
                    loss = loss - scale * p.ln();
                    continue;
                }
                let temperature = clamp_temperature(sc.t_pre);
                let lambda = sc.l_pre.sigmoid();
                let (q, dq_dt) = knn_prob_and_slope(n, t, temperature);
                let prob = lambda * p + (S::one() - lambda) * q;
                loss = loss - scale * prob.ln();
                let g_prob = -scale * weight / prob;
                let g_l_pre = g_prob * (p - q) * lambda * (S::one() - lambda);
                let g_t_pre = g_prob * (S::one() - lambda) * dq_dt * temperature_slope(sc.t_pre);
                let parts = match kind {
                    SiteKind::Atom => vec![i],
                    SiteKind::Bond => {
                        let (s, e) = x.edge_ends[i];
                        vec![s, e]
                    }
                };
                let g_z = self.site_backward(kind, sc, g_t_pre, g_l_pre, grad);
                for (j, &node) in parts.iter().enumerate() {
                    for (a, &b) in g_gin[node].iter_mut().zip(&g_z[j * h..(j + 1) * h]) {
                        *a = *a + b;
                    }
                }
            }
            Ok(())
        };
        site_pass(SiteKind::Atom, &ctx.atom_gnn, &ctx.atom_neighbors, &ctx.atom_labels, &c.atoms)?;
        site_pass(SiteKind::Bond, &ctx.bond_gnn, &ctx.bond_neighbors, &ctx.bond_labels, &c.bonds)?;

        for ((agg, gv), (h_v, _)) in c.agg.iter().zip(&g_gin).zip(x.nodes.iter().zip(&c.g)) {
            let mut g_agg = vec![S::zero(); h];
            self.gin.backward(agg, gv, &mut grad.gin, Some(&mut g_agg));
            grad.eps = grad.eps + dot(&g_agg, h_v);
        }
        Ok(loss)
    }

    /// Backpropagates head pre-activation gradients through one site's mixer
    /// and distance projection. Returns the gradient with respect to the GIN
    /// parts of the mixer input.
    fn site_backward(&self, kind: SiteKind, sc: &SiteCache<S>, g_t_pre: S, g_l_pre: S, grad: &mut Self) -> Vec<S> {
        let (dist_l, mix, temp, lam, gd, gm, gt, gl) = match kind {
            SiteKind::Atom => (
                &self.atom_dist,
                &self.atom_mix,
                &self.atom_temp,
                &self.atom_lambda,
                &mut grad.atom_dist,
                &mut grad.atom_mix,
                &mut grad.atom_temp,
                &mut grad.atom_lambda,
            ),
            SiteKind::Bond => (
                &self.bond_dist,
                &self.bond_mix,
                &self.bond_temp,
                &self.bond_lambda,
                &mut grad.bond_dist,
                &mut grad.bond_mix,
                &mut grad.bond_temp,
                &mut grad.bond_lambda,
            ),
        };
        let h = self.config.hidden;
        let mut g_o = vec![S::zero(); h];
        temp.backward(&sc.o, &[g_t_pre], gt, Some(&mut g_o));
        lam.backward(&sc.o, &[g_l_pre], gl, Some(&mut g_o));
        relu_backward(&sc.u, &mut g_o);
        let mut g_z = vec![S::zero(); sc.z.len()];
        mix.backward(&relu_vec(&sc.z), &g_o, gm, Some(&mut g_z));
        relu_backward(&sc.z, &mut g_z);
        let split = sc.z.len() - h;
        dist_l.backward(&sc.dist, &g_z[split..], gd, None);
        g_z.truncate(split);
        g_z
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.config.hidden as u32);
        w.u32(self.config.k as u32);
        for t in self.tensors() {
            w.f64s(t.iter().map(|v| v.to_f64_lossless()));
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let config = AdapterConfig {
            hidden: r.u32()? as usize,
            k: r.u32()? as usize,
        };
        let mut p = Self::zeros(config).map_err(|e| Error::Format(e.to_string()))?;
        for t in p.tensors_mut() {
            let vals = r.f64s(t.len())?;
            for (x, v) in t.iter_mut().zip(vals) {
                *x = S::of(v);
            }
        }
        r.finish()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// `q = P_KNN(t)` at `temperature` and `dq/dT`.
fn knn_prob_and_slope<S: Scalar>(n: &NeighborList<S>, t: usize, temperature: S) -> (S, S) {
    let d_min = n.entries.iter().map(|e| e.1).fold(S::infinity(), |a, b| a.min(b));
    let t2 = temperature * temperature;
    let (mut w_all, mut w_t, mut dw_all, mut dw_t) = (S::zero(), S::zero(), S::zero(), S::zero());
    for &(tpl, d) in &n.entries {
        let shifted = d - d_min;
        let w = (-shifted / temperature).exp();
        let dw = w * shifted / t2;
        w_all = w_all + w;
        dw_all = dw_all + dw;
        if tpl as usize == t {
            w_t = w_t + w;
            dw_t = dw_t + dw;
        }
    }
    let q = w_t / w_all;
    (q, (dw_t - q * dw_all) / w_all)
}

/// Mean per-record loss over precomputed contexts.
pub fn contexts_loss<S: Scalar>(p: &AdapterParams<S>, contexts: &[RecordContext<S>]) -> Result<S> {
    if contexts.is_empty() {
        return Ok(S::zero());
    }
    let mut scratch = p.zeros_like();
    let mut total = S::zero();
    for c in contexts {
        total = total + p.context_loss_and_grads(c, S::zero(), &mut scratch)?;
    }
    Ok(total / S::of(contexts.len() as f64))
}

/// Loss and adapter gradients for one record; the backbone and stores stay
/// fixed.
pub fn adapter_loss_and_grads<S: Scalar>(
    record: &ReactionRecord,
    backbone: &BackboneParams<S>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    params: &AdapterParams<S>,
) -> Result<(S, AdapterParams<S>)> {
    let ctx = RecordContext::build(record, backbone, atom_store, bond_store, params.config.k)?;
    let mut grad = params.zeros_like();
    let loss = params.context_loss_and_grads(&ctx, S::one(), &mut grad)?;
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterTrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Initial bias of both temperature heads.
    pub temperature_bias: f64,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            k: crate::retrieve::DEFAULT_K,
            epochs: 10,
            lr: 1e-3,
            batch_size: 8,
            temperature_bias: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdapterOutcome<S> {
    pub params: AdapterParams<S>,
    /// Validation loss after each epoch; index 0 is the initialization.
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Trains on precomputed validation contexts and returns the parameters with
/// the lowest loss over the same contexts.
pub fn train_adapter_on<S: Scalar>(
    contexts: &[RecordContext<S>],
    hidden: usize,
    cfg: &AdapterTrainConfig,
) -> Result<AdapterOutcome<S>> {
    if contexts.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = AdapterParams::init(AdapterConfig { hidden, k: cfg.k }, cfg.temperature_bias, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..contexts.len()).collect();
    let initial = contexts_loss(&params, contexts)?.to_f64_lossless();
    if !initial.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            msg: "non-finite initial loss".into(),
        });
    }
    let mut losses = vec![initial];
    let mut best = (initial, 0usize, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = params.zeros_like();
            let w = S::one() / S::of(chunk.len() as f64);
            for &i in chunk {
                params.context_loss_and_grads(&contexts[i], w, &mut grad)?;
            }
            if !grad.all_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "non-finite gradient".into(),
                });
            }
            adam.step(&mut params, &grad);
        }
        let loss = contexts_loss(&params, contexts)?.to_f64_lossless();
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: "non-finite validation loss".into(),
            });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, params.clone());
        }
    }
    Ok(AdapterOutcome {
        params: best.2,
        losses,
        best_epoch: best.1,
    })
}

/// Precomputes retrieval contexts for `val` and trains the adapter on them.
pub fn train_adapter<S: Scalar>(
    val: &Dataset,
    backbone: &BackboneParams<S>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    cfg: &AdapterTrainConfig,
) -> Result<AdapterOutcome<S>> {
    let contexts = val
        .records
        .iter()
        .map(|r| RecordContext::build(r, backbone, atom_store, bond_store, cfg.k))
        .collect::<Result<Vec<_>>>()?;
    train_adapter_on(&contexts, backbone.config.hidden, cfg)
}
