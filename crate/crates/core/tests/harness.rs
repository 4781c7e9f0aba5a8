mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retroknn::config::PipelineConfig;
use retroknn::graphio::{generate_synthetic_with, Dataset, Site};
use retroknn::harness::{
    bench_latency, evaluate_topk, grid_search_contexts, run_fewshot_experiment, run_pipeline, DEFAULT_KS,
};
use retroknn::retrieve::{RankedEntry, RankedPrediction};

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(1);
    cfg.synth.n_records = 400;
    cfg.synth.n_atom_templates = 8;
    cfg.synth.n_bond_templates = 4;
    cfg.backbone.layers = 1;
    cfg.backbone.hidden = 8;
    cfg.backbone.epochs = 3;
    cfg.adapter.epochs = 2;
    cfg.index.m = 4;
    cfg.k = 8;
    cfg.synced()
}

fn random_predictions(d: &Dataset, seed: u64) -> Vec<RankedPrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    d.records
        .iter()
        .map(|r| {
            let mut entries: Vec<RankedEntry> = (0..r.n_nodes())
                .flat_map(|i| (1..=d.header.n_atom_templates as u32).map(move |t| (Site::Atom(i), t)))
                .map(|(site, template)| RankedEntry { site, template, prob: 0.0 })
                .collect();
            entries.shuffle(&mut rng);
            entries.truncate(50);
            RankedPrediction { entries }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn evaluation_is_monotone_and_order_free(seed in any::<u64>()) {
        let cfg = tiny_config();
        let (_, _, test) = generate_synthetic_with(&cfg.synth).unwrap();
        let preds = random_predictions(&test, seed);
        let r = evaluate_topk(&preds, &test, &DEFAULT_KS).unwrap();
        prop_assert!(r.overall.accuracy.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.overall.accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert_eq!(r.per_class.values().map(|c| c.n_records).sum::<usize>(), test.len());

        let mut order: Vec<usize> = (0..test.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let shuffled = Dataset { header: test.header, records: order.iter().map(|&i| test.records[i].clone()).collect() };
        let preds2: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
        prop_assert_eq!(evaluate_topk(&preds2, &shuffled, &DEFAULT_KS).unwrap(), r);
    }
}

#[test]
fn grid_search_contract() {
    let cfg = tiny_config();
    let (train, val, _) = generate_synthetic_with(&cfg.synth).unwrap();
    let p = run_pipeline(&train, &val, &cfg).unwrap();
    assert_eq!(p.grid.table.len(), 20);
    assert!(p.grid.table.iter().all(|r| p.grid.best_loss <= r.loss));
    let contexts = p.contexts(&val, cfg.k).unwrap();
    let single = grid_search_contexts(&contexts, &[7.0], &[0.25]).unwrap();
    assert_eq!((single.best_temperature, single.best_lambda, single.table.len()), (7.0, 0.25, 1));
    // Equal losses resolve to the smallest temperature, then the smallest lambda.
    let tied = grid_search_contexts(&contexts, &[9.0, 3.0, 3.0], &[1.0]).unwrap();
    assert_eq!((tied.best_temperature, tied.best_lambda), (3.0, 1.0));
    assert!(grid_search_contexts(&contexts, &[], &[0.5]).is_err());
}

#[test]
fn bench_reports_single_run_without_spread() {
    let cfg = tiny_config();
    let (train, val, test) = generate_synthetic_with(&cfg.synth).unwrap();
    let p = run_pipeline(&train, &val, &cfg).unwrap();
    let (fused, gnn) = bench_latency(&test, &p.backbone, &p.atom_store, &p.bond_store, &p.adapter, cfg.k, cfg.top_n, 1).unwrap();
    assert_eq!((fused.std_ms, gnn.std_ms), (0.0, 0.0));
    assert_eq!(fused.n_runs, 1);
    assert!(fused.to_string().starts_with("with KNN: ") && fused.to_string().ends_with(" ms"));
}

#[test]
fn no_held_classes_is_the_standard_experiment() {
    let cfg = tiny_config();
    let (train, val, test) = generate_synthetic_with(&cfg.synth).unwrap();
    let report = run_fewshot_experiment(&train, &val, &test, &BTreeSet::new(), &[0.0], &cfg).unwrap();
    let regime = &report.regimes[0];
    assert_eq!((regime.n_train, regime.n_val), (train.len(), val.len()));
    assert!(regime.held.is_empty());
    let p = run_pipeline(&train, &val, &cfg).unwrap();
    let c = p.evaluate(&test, cfg.k, cfg.top_n, &[5, 10]).unwrap();
    assert_eq!(c.adaptive, regime.fused);
    assert_eq!(c.gnn, regime.gnn);
}
