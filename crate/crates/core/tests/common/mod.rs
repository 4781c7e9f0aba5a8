//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retroknn::backbone::{BackboneConfig, BackboneParams, EmbeddingSet};
use retroknn::config::PipelineConfig;
use retroknn::graphio::{Edge, ReactionRecord};
use retroknn::linalg::softmax;
use retroknn::optim::ParamSet;
use retroknn::retrieve::{NeighborList, RecordContext};

/// Largest `|a - n| / max(|a|, |n|, floor)` between analytic gradient entries
/// and central differences of `loss`.
pub fn max_fd_rel_error<P: ParamSet<f64>>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    h: f64,
    floor: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        for j in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.tensors()[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Random connected-ish graph with unique canonical edges.
pub fn random_record(rng: &mut ChaCha8Rng, cfg: &BackboneConfig, n_nodes: usize) -> ReactionRecord {
    let nodes: Vec<usize> = (0..n_nodes).map(|_| rng.gen_range(0..cfg.node_vocab)).collect();
    let mut edges = Vec::new();
    for v in 1..n_nodes {
        let u = rng.gen_range(0..v);
        edges.push(Edge {
            u,
            v,
            feat: rng.gen_range(0..cfg.edge_vocab),
        });
    }
    if n_nodes > 3 {
        let (u, v) = (0, n_nodes - 1);
        if !edges.iter().any(|e| e.canonical() == (u, v)) {
            edges.push(Edge {
                u,
                v,
                feat: rng.gen_range(0..cfg.edge_vocab),
            });
        }
    }
    let atom_labels = (0..n_nodes)
        .map(|_| rng.gen_range(0..=cfg.n_atom_templates as u32))
        .collect();
    let bond_labels = edges
        .iter()
        .map(|_| rng.gen_range(0..=cfg.n_bond_templates as u32))
        .collect();
    ReactionRecord {
        nodes,
        edges,
        atom_labels,
        bond_labels,
        reaction_class: rng.gen_range(1..=10),
    }
}

pub fn small_backbone_config(layers: usize, hidden: usize) -> BackboneConfig {
    BackboneConfig {
        layers,
        hidden,
        node_vocab: 4,
        edge_vocab: 3,
        n_atom_templates: 4,
        n_bond_templates: 3,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_neighbors(rng: &mut ChaCha8Rng, k: usize, n_templates: usize) -> NeighborList<f64> {
    NeighborList::new(
        (0..k)
            .map(|_| (rng.gen_range(0..=n_templates as u32), rng.gen_range(0.0..6.0)))
            .collect(),
    )
}

/// Hand-built retrieval context: random hidden states, classifier
/// distributions and neighbor lists for a random graph.
pub fn random_context(seed: u64, hidden: usize, k: usize) -> RecordContext<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_backbone_config(1, hidden);
    let n = rng.gen_range(3..6);
    let r = random_record(&mut rng, &cfg, n);
    let nodes: Vec<Vec<f64>> = (0..r.n_nodes()).map(|_| random_vec(&mut rng, hidden, -1.0, 1.0)).collect();
    let edges: Vec<Vec<f64>> = (0..r.n_edges()).map(|_| random_vec(&mut rng, hidden, -1.0, 1.0)).collect();
    let atom_gnn = (0..r.n_nodes())
        .map(|_| softmax(&random_vec(&mut rng, cfg.n_atom_templates + 1, -2.0, 2.0)))
        .collect();
    let bond_gnn = (0..r.n_edges())
        .map(|_| softmax(&random_vec(&mut rng, cfg.n_bond_templates + 1, -2.0, 2.0)))
        .collect();
    let atom_neighbors = (0..r.n_nodes())
        .map(|_| random_neighbors(&mut rng, k, cfg.n_atom_templates))
        .collect();
    let bond_neighbors = (0..r.n_edges())
        .map(|_| random_neighbors(&mut rng, k, cfg.n_bond_templates))
        .collect();
    RecordContext {
        embeddings: EmbeddingSet { nodes, edges },
        edge_ends: r.edges.iter().map(|e| e.canonical()).collect(),
        atom_gnn,
        bond_gnn,
        atom_neighbors,
        bond_neighbors,
        atom_labels: r.atom_labels,
        bond_labels: r.bond_labels,
        n_atom_templates: cfg.n_atom_templates,
        n_bond_templates: cfg.n_bond_templates,
    }
}

/// Glorot initialization plus a uniform jitter on every parameter, so biases
/// are nonzero and pre-activations sit away from ReLU kinks.
pub fn random_backbone(seed: u64, layers: usize, hidden: usize) -> BackboneParams<f64> {
    let mut p = BackboneParams::init(small_backbone_config(layers, hidden), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2));
    }
    p
}

/// Small, fast end-to-end configuration on the seeded synthetic corpus.
pub fn desk_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.synth.n_records = 1500;
    cfg.synth.rare_template_fraction = 0.3;
    cfg.backbone.layers = 2;
    cfg.backbone.hidden = 32;
    cfg.backbone.epochs = 30;
    cfg.synced()
}
