mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retroknn::backbone::BackboneParams;
use retroknn::graphio::{Edge, ReactionRecord, Site};
use retroknn::retrieve::{
    interpolate, knn_distribution, predict_gnn_only, predict_topk, rank, read_predictions, write_predictions,
    Fusion, NeighborList, RankedPrediction, RecordContext,
};
use retroknn::store::{StoreKind, TemplateStore};
use retroknn::vindex::IndexConfig;

use common::small_backbone_config;

fn neighbor_list() -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::vec((0u32..8, 0.0f64..50.0), 1..40)
}

proptest! {
    #[test]
    fn knn_output_is_a_distribution(entries in neighbor_list(), t in 1.0f64..100.0) {
        let n = NeighborList::new(entries.clone());
        let p = knn_distribution(&n, t, 7).unwrap();
        prop_assert_eq!(p.len(), 8);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (tpl, &v) in p.iter().enumerate() {
            prop_assert!(v >= 0.0);
            if !entries.iter().any(|e| e.0 as usize == tpl) {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn knn_ignores_neighbor_order(entries in neighbor_list(), t in 1.0f64..100.0, seed in any::<u64>()) {
        let mut shuffled = entries.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = knn_distribution(&NeighborList { entries }, t, 7).unwrap();
        let b = knn_distribution(&NeighborList { entries: shuffled }, t, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distant_neighbor_is_negligible(entries in neighbor_list(), t in 1.0f64..100.0, tpl in 0u32..8) {
        let d_min = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let mut more = entries.clone();
        // exp(-60) is far below 1e-12 of the nearest neighbor's weight.
        more.push((tpl, d_min + 60.0 * t));
        let a = knn_distribution(&NeighborList::new(entries), t, 7).unwrap();
        let b = knn_distribution(&NeighborList::new(more), t, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn high_temperature_approaches_frequencies(tpls in prop::collection::vec(0u32..5, 1..32), spread in 0.0f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(u32, f64)> = tpls.iter().map(|&t| (t, rng.gen_range(0.0..=spread))).collect();
        let p = knn_distribution(&NeighborList::new(entries), 100.0, 4).unwrap();
        let bound = 1.0 - (-spread / 100.0f64).exp() + 1e-12;
        for (t, &v) in p.iter().enumerate() {
            let freq = tpls.iter().filter(|&&x| x as usize == t).count() as f64 / tpls.len() as f64;
            prop_assert!((v - freq).abs() <= bound, "template {} prob {} freq {}", t, v, freq);
        }
    }

    #[test]
    fn interpolation_preserves_mass_and_is_monotone(
        a in prop::collection::vec(0.01f64..1.0, 6),
        b in prop::collection::vec(0.01f64..1.0, 6),
        l1 in 0.0f64..1.0,
        l2 in 0.0f64..1.0,
    ) {
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        let (g, k) = (norm(a), norm(b));
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        let p_lo = interpolate(&g, &k, lo).unwrap();
        let p_hi = interpolate(&g, &k, hi).unwrap();
        prop_assert!((p_hi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if hi > lo {
            for t in 0..6 {
                if g[t] > k[t] {
                    prop_assert!(p_hi[t] > p_lo[t]);
                }
            }
        }
    }

    #[test]
    fn ranking_is_sorted_pure_and_truncated(
        atoms in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5]), 4), 0..6),
        bonds in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5]), 3), 0..6),
        top_n in 1usize..60,
    ) {
        let r = rank(&atoms, &bonds, top_n);
        prop_assert_eq!(&r, &rank(&atoms, &bonds, top_n));
        prop_assert!(r.entries.len() <= top_n);
        for w in r.entries.windows(2) {
            let key = |e: &retroknn::retrieve::RankedEntry| (e.site, e.template);
            prop_assert!(w[0].prob > w[1].prob || (w[0].prob == w[1].prob && key(&w[0]) < key(&w[1])));
        }
        prop_assert!(r.entries.iter().all(|e| e.template != 0 && e.prob > 0.0));
    }
}

/// 3 atoms and 2 bonds; stores of hand-picked keys around the graph's own
/// embeddings.
fn toy() -> (ReactionRecord, BackboneParams<f64>, TemplateStore, TemplateStore) {
    let cfg = small_backbone_config(2, 4);
    let bb = BackboneParams::<f64>::init(cfg, 21).unwrap();
    let g = ReactionRecord {
        nodes: vec![0, 2, 1],
        edges: vec![Edge { u: 0, v: 1, feat: 1 }, Edge { u: 1, v: 2, feat: 0 }],
        atom_labels: vec![0, 3, 0],
        bond_labels: vec![0, 0],
        reaction_class: 2,
    };
    let emb = bb.encode(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = |kind, hs: &[Vec<f64>], n_t: u32| {
        let (mut keys, mut values) = (Vec::new(), Vec::new());
        for h in hs {
            for _ in 0..4 {
                keys.extend(h.iter().map(|&x| (x + rng.gen_range(-0.3..0.3)) as f32));
                values.push(rng.gen_range(0..=n_t));
            }
        }
        TemplateStore::from_entries(kind, 4, keys, values, &IndexConfig::flat()).unwrap()
    };
    let a = store(StoreKind::Atom, &emb.nodes, 4);
    let b = store(StoreKind::Bond, &emb.edges, 3);
    (g, bb, a, b)
}

fn oracle(
    g: &ReactionRecord,
    bb: &BackboneParams<f64>,
    stores: [&TemplateStore; 2],
    k: usize,
    t: f64,
    lambda: f64,
) -> Vec<(Site, u32, f64)> {
    let emb = bb.encode(g).unwrap();
    let (pa, pb) = bb.head_probs(&emb).unwrap();
    let mut cands = Vec::new();
    for (kind, (hs, ps)) in [(&emb.nodes, &pa), (&emb.edges, &pb)].into_iter().enumerate() {
        let store = stores[kind];
        for (i, (h, p)) in hs.iter().zip(ps.iter()).enumerate() {
            let q: Vec<f32> = h.iter().map(|&x| x as f32).collect();
            let mut d: Vec<(f32, usize)> = (0..store.len())
                .map(|j| {
                    let mut s = 0.0f32;
                    for (a, b) in q.iter().zip(store.key(j)) {
                        s += (a - b) * (a - b);
                    }
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut w = vec![0.0f64; p.len()];
            for &(dist, j) in d.iter().take(k) {
                w[store.values[j] as usize] += (-(dist as f64) / t).exp();
            }
            let total: f64 = w.iter().sum();
            for tpl in 1..p.len() {
                let prob = lambda * p[tpl] + (1.0 - lambda) * w[tpl] / total;
                let site = if kind == 0 { Site::Atom(i) } else { Site::Bond(i) };
                if prob > 0.0 {
                    cands.push((site, tpl as u32, prob));
                }
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cands
}

#[test]
fn toy_graph_matches_scalar_pipeline() {
    let (g, bb, a, b) = toy();
    for (k, t, lambda) in [(3, 2.0, 0.4), (5, 1.0, 0.1), (12, 30.0, 0.75)] {
        let got = predict_topk(&g, &bb, &a, &b, &Fusion::Fixed { temperature: t, lambda }, k, 50).unwrap();
        let want = oracle(&g, &bb, [&a, &b], k, t, lambda);
        assert_eq!(got.entries.len(), want.len().min(50));
        for (e, w) in got.entries.iter().zip(&want) {
            assert_eq!((e.site, e.template), (w.0, w.1));
            assert!((e.prob - w.2).abs() < 1e-12);
        }
    }
}

#[test]
fn boundary_lambdas_reduce_to_either_source() {
    let (g, bb, a, b) = toy();
    let ctx = RecordContext::build(&g, &bb, &a, &b, 4).unwrap();
    let pure_gnn = ctx.predict(&Fusion::Fixed { temperature: 3.0, lambda: 1.0 }, 50).unwrap();
    assert_eq!(pure_gnn, predict_gnn_only(&g, &bb, 50).unwrap());
    let pure_knn = ctx.predict(&Fusion::Fixed { temperature: 3.0, lambda: 0.0 }, 50).unwrap();
    let knn_a: Vec<Vec<f64>> = ctx.atom_neighbors.iter().map(|n| knn_distribution(n, 3.0, 4).unwrap()).collect();
    let knn_b: Vec<Vec<f64>> = ctx.bond_neighbors.iter().map(|n| knn_distribution(n, 3.0, 3).unwrap()).collect();
    assert_eq!(pure_knn, rank(&knn_a, &knn_b, 50));
}

#[test]
fn all_zero_neighbors_and_confident_zero_class_give_short_list() {
    let (g, bb, a, mut b) = toy();
    let mut a = a;
    a.values.iter_mut().for_each(|v| *v = 0);
    b.values.iter_mut().for_each(|v| *v = 0);
    let r = predict_topk(&g, &bb, &a, &b, &Fusion::Fixed { temperature: 1.0, lambda: 0.0 }, 4, 50).unwrap();
    assert!(r.entries.is_empty());
}

#[test]
fn dimension_mismatch_is_config_error() {
    let (g, _, a, b) = toy();
    let other = BackboneParams::<f64>::init(small_backbone_config(1, 6), 0).unwrap();
    let err = predict_topk(&g, &other, &a, &b, &Fusion::Fixed { temperature: 1.0, lambda: 0.5 }, 4, 50);
    assert!(matches!(err, Err(retroknn::Error::Config(_))));
}

#[test]
fn small_store_uses_every_entry() {
    let (g, bb, a, b) = toy();
    let ctx = RecordContext::build(&g, &bb, &a, &b, 1000).unwrap();
    assert!(ctx.atom_neighbors.iter().all(|n| n.len() == a.len()));
    assert!(ctx.bond_neighbors.iter().all(|n| n.len() == b.len()));
}

#[test]
fn prediction_file_round_trip() {
    let (g, bb, a, b) = toy();
    let preds: Vec<RankedPrediction> = [0.2, 0.8]
        .iter()
        .map(|&l| predict_topk(&g, &bb, &a, &b, &Fusion::Fixed { temperature: 5.0, lambda: l }, 4, 50).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    write_predictions(&preds, &path).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
}
