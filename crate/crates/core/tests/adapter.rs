mod common;

use proptest::prelude::*;
use retroknn::adapter::{
    distance_features, train_adapter_on, AdapterConfig, AdapterParams, AdapterTrainConfig, SiteKind,
};
use retroknn::optim::ParamSet;
use retroknn::retrieve::Fusion;

use common::{max_fd_rel_error, random_context};

fn loss_of(p: &AdapterParams<f64>, ctx: &retroknn::retrieve::RecordContext<f64>) -> f64 {
    let mut scratch = p.zeros_like();
    p.context_loss_and_grads(ctx, 1.0, &mut scratch).unwrap()
}

fn unsaturated(p: &AdapterParams<f64>, ctx: &retroknn::retrieve::RecordContext<f64>) -> bool {
    let out = p.forward(&ctx.adapter_input()).unwrap();
    out.atoms
        .iter()
        .chain(&out.bonds)
        .all(|s| s.temperature > 1.05 && s.temperature < 99.0)
}

#[test]
fn gradients_match_central_differences() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let ctx = random_context(seed, 4, 3);
        let p = AdapterParams::<f64>::init(AdapterConfig { hidden: 4, k: 3 }, 4.0, seed).unwrap();
        if !unsaturated(&p, &ctx) {
            continue;
        }
        let mut grad = p.zeros_like();
        p.context_loss_and_grads(&ctx, 1.0, &mut grad).unwrap();
        let err = max_fd_rel_error(&p, &grad, |q| loss_of(q, &ctx), 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        checked += 1;
        if checked == 5 {
            break;
        }
    }
    assert_eq!(checked, 5);
}

#[test]
fn saturated_temperature_head_gets_no_gradient() {
    let ctx = random_context(3, 4, 3);
    for bias in [1000.0, -1000.0] {
        let mut p = AdapterParams::<f64>::init(AdapterConfig { hidden: 4, k: 3 }, bias, 1).unwrap();
        p.atom_temp.w.data.iter_mut().for_each(|w| *w *= 1e-3);
        p.bond_temp.w.data.iter_mut().for_each(|w| *w *= 1e-3);
        let mut grad = p.zeros_like();
        p.context_loss_and_grads(&ctx, 1.0, &mut grad).unwrap();
        assert!(grad.atom_temp.w.data.iter().all(|&g| g == 0.0));
        assert!(grad.bond_temp.w.data.iter().all(|&g| g == 0.0));
        assert_eq!((grad.atom_temp.b[0], grad.bond_temp.b[0]), (0.0, 0.0));
        assert!(grad.atom_lambda.b[0] != 0.0);
    }
}

#[test]
fn pinned_lambda_with_perfect_classifier_has_vanishing_loss() {
    let mut ctx = random_context(5, 4, 3);
    for (d, &t) in ctx.atom_gnn.iter_mut().zip(&ctx.atom_labels) {
        d.iter_mut().for_each(|p| *p = 0.0);
        d[t as usize] = 1.0;
    }
    for (d, &t) in ctx.bond_gnn.iter_mut().zip(&ctx.bond_labels) {
        d.iter_mut().for_each(|p| *p = 0.0);
        d[t as usize] = 1.0;
    }
    let mut p = AdapterParams::<f64>::zeros(AdapterConfig { hidden: 4, k: 3 }).unwrap();
    p.atom_lambda.b[0] = 60.0;
    p.bond_lambda.b[0] = 60.0;
    assert!(loss_of(&p, &ctx) < 1e-12);
}

#[test]
fn pinned_lambda_reproduces_classifier_ranking() {
    for seed in 0..5 {
        let ctx = random_context(seed, 4, 3);
        let mut p = AdapterParams::<f64>::init(AdapterConfig { hidden: 4, k: 3 }, 10.0, seed).unwrap();
        for d in [&mut p.atom_lambda, &mut p.bond_lambda] {
            d.w.data.iter_mut().for_each(|w| *w = 0.0);
            d.b[0] = 800.0;
        }
        assert_eq!(
            ctx.predict(&Fusion::Adaptive(&p), 50).unwrap(),
            ctx.predict_gnn_only(50)
        );
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop recomputation of the whole adapter for one graph.
fn scalar_oracle(p: &AdapterParams<f64>, ctx: &retroknn::retrieve::RecordContext<f64>) -> Vec<(f64, f64)> {
    let h = p.config.hidden;
    let k = p.config.k;
    let nodes = &ctx.embeddings.nodes;
    let edges = &ctx.embeddings.edges;
    let lin = |w: &retroknn::linalg::Dense<f64>, x: &[f64]| -> Vec<f64> {
        (0..w.w.rows)
            .map(|r| {
                let mut s = w.b[r];
                for c in 0..w.w.cols {
                    s += w.w.data[r * w.w.cols + c] * x[c];
                }
                s
            })
            .collect()
    };
    let mut g = Vec::new();
    for v in 0..nodes.len() {
        let mut agg: Vec<f64> = (0..h).map(|i| (1.0 + p.eps) * nodes[v][i]).collect();
        for (e, &(s, t)) in ctx.edge_ends.iter().enumerate() {
            if s == v || t == v {
                for i in 0..h {
                    agg[i] += relu(nodes[v][i] + edges[e][i]);
                }
            }
        }
        g.push(lin(&p.gin, &agg));
    }
    let head = |z: Vec<f64>, mix, temp, lam| {
        let zr: Vec<f64> = z.iter().map(|&x| relu(x)).collect();
        let o: Vec<f64> = lin(mix, &zr).into_iter().map(relu).collect();
        let t = lin(temp, &o)[0].clamp(1.0, 100.0);
        (t, sig(lin(lam, &o)[0]))
    };
    let mut out = Vec::new();
    for v in 0..nodes.len() {
        let d = distance_features(&ctx.atom_neighbors[v], k);
        let mut z = g[v].clone();
        z.extend(lin(&p.atom_dist, &d));
        out.push(head(z, &p.atom_mix, &p.atom_temp, &p.atom_lambda));
    }
    for (e, &(s, t)) in ctx.edge_ends.iter().enumerate() {
        let d = distance_features(&ctx.bond_neighbors[e], k);
        let mut z = g[s].clone();
        z.extend(&g[t]);
        z.extend(lin(&p.bond_dist, &d));
        out.push(head(z, &p.bond_mix, &p.bond_temp, &p.bond_lambda));
    }
    out
}

#[test]
fn forward_matches_scalar_recomputation() {
    for seed in 0..8 {
        let ctx = random_context(100 + seed, 5, 4);
        let mut p = AdapterParams::<f64>::init(AdapterConfig { hidden: 5, k: 4 }, 3.0, seed).unwrap();
        p.eps = 0.3;
        let out = p.forward(&ctx.adapter_input()).unwrap();
        let got: Vec<(f64, f64)> = out
            .atoms
            .iter()
            .chain(&out.bonds)
            .map(|s| (s.temperature, s.lambda))
            .collect();
        let want = scalar_oracle(&p, &ctx);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }
}

#[test]
fn site_forward_rejects_wrong_k() {
    let p = AdapterParams::<f64>::zeros(AdapterConfig { hidden: 2, k: 4 }).unwrap();
    let g = [0.1, 0.2];
    assert!(p.site_forward(SiteKind::Bond, &[&g, &g], &[1.0, 2.0]).is_err());
}

#[test]
fn training_is_deterministic_and_never_worse_than_init() {
    let contexts: Vec<_> = (0..24).map(|s| random_context(200 + s, 6, 4)).collect();
    let cfg = AdapterTrainConfig {
        k: 4,
        epochs: 4,
        temperature_bias: 5.0,
        seed: 11,
        ..AdapterTrainConfig::default()
    };
    let a = train_adapter_on(&contexts, 6, &cfg).unwrap();
    let b = train_adapter_on(&contexts, 6, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.losses.len(), 5);
    assert!(a.losses[a.best_epoch] <= a.losses[0]);
    assert!(a.losses[1..].iter().any(|&l| l < a.losses[0]));
}

proptest! {
    #[test]
    fn outputs_stay_in_range(seed in 0u64..1000, scale in 0.01f64..20.0, bias in -200.0f64..200.0) {
        let ctx = random_context(seed, 3, 2);
        let mut p = AdapterParams::<f64>::init(AdapterConfig { hidden: 3, k: 2 }, bias, seed).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= scale);
        }
        let out = p.forward(&ctx.adapter_input()).unwrap();
        for s in out.atoms.iter().chain(&out.bonds) {
            prop_assert!((1.0..=100.0).contains(&s.temperature));
            prop_assert!((0.0..=1.0).contains(&s.lambda));
        }
        prop_assert_eq!(out.clone(), p.forward(&ctx.adapter_input()).unwrap());
    }
}
