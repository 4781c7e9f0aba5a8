use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retroknn::graphio::{
    build_few_shot_split, build_zero_shot_split, generate_synthetic, parse_dataset, AtomSignature,
    BondSignature, Dataset, DatasetHeader, ReactionRecord, Site,
};

fn header() -> DatasetHeader {
    DatasetHeader {
        n_atom_templates: 3,
        n_bond_templates: 1,
        node_vocab: 2,
        edge_vocab: 1,
    }
}

/// Record `i` has `i + 1` nodes so kept subsets can be traced back.
fn dataset(classes: &[u8]) -> Dataset {
    let records = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| ReactionRecord {
            nodes: vec![0; 1 + i],
            edges: vec![],
            atom_labels: vec![0; 1 + i],
            bond_labels: vec![],
            reaction_class: c,
        })
        .collect();
    Dataset::new(header(), records).unwrap()
}

fn positions(d: &Dataset) -> Vec<usize> {
    d.records.iter().map(|r| r.nodes.len() - 1).collect()
}

proptest! {
    #[test]
    fn few_shot_partitions_the_input(
        classes in prop::collection::vec(1u8..=10, 0..120),
        held in prop::collection::btree_set(1u8..=10, 0..6),
        keep in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let d = dataset(&classes);
        let kept = build_few_shot_split(&d, &held, keep, seed);
        let pos = positions(&kept);
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let mut per_class: BTreeMap<u8, usize> = BTreeMap::new();
        for r in &kept.records {
            *per_class.entry(r.reaction_class).or_default() += 1;
        }
        for c in 1..=10u8 {
            let n = classes.iter().filter(|&&x| x == c).count();
            let want = if held.contains(&c) { (keep * n as f64 + 1e-9).floor() as usize } else { n };
            prop_assert_eq!(per_class.get(&c).copied().unwrap_or(0), want);
        }
        prop_assert_eq!(&kept, &build_few_shot_split(&d, &held, keep, seed));
        let removed: BTreeSet<usize> = (0..classes.len()).filter(|i| !pos.contains(i)).collect();
        prop_assert_eq!(removed.len() + pos.len(), classes.len());
    }

    #[test]
    fn zero_keep_equals_zero_shot(
        classes in prop::collection::vec(1u8..=10, 0..80),
        held in prop::collection::btree_set(1u8..=10, 0..6),
        seed in any::<u64>(),
    ) {
        let d = dataset(&classes);
        prop_assert_eq!(build_few_shot_split(&d, &held, 0.0, seed), build_zero_shot_split(&d, &held));
        prop_assert_eq!(build_few_shot_split(&d, &held, 1.0, seed), d);
    }
}

#[test]
fn forty_records_keep_four() {
    let mut classes = vec![6u8; 40];
    classes.extend([1, 2, 3]);
    let d = dataset(&classes);
    let held: BTreeSet<u8> = [6].into();
    let a = build_few_shot_split(&d, &held, 0.1, 7);
    assert_eq!(a.records.iter().filter(|r| r.reaction_class == 6).count(), 4);
    assert_eq!(a, build_few_shot_split(&d, &held, 0.1, 7));
}

#[test]
fn file_round_trip_preserves_order() {
    let (train, _, _) = generate_synthetic(60, 6, 3, 0.0, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.jsonl");
    train.write_jsonl(&p).unwrap();
    assert_eq!(parse_dataset(&p).unwrap(), train);
    std::fs::write(&p, "").unwrap();
    assert!(parse_dataset(&p).unwrap().is_empty());
}

#[test]
fn record_with_spec_center_layout() {
    let text = "{\"n_atom_templates\":5,\"n_bond_templates\":1,\"node_vocab\":3,\"edge_vocab\":2}\n\
                {\"nodes\":[0,1,2],\"edges\":[[0,1,0],[1,2,1]],\"atom_labels\":[0,5,0],\"bond_labels\":[0,0],\"class\":3}\n";
    let d = Dataset::from_jsonl(text).unwrap();
    assert_eq!(d.records[0].centers(), vec![(Site::Atom(1), 5)]);
}

#[test]
fn synthetic_generation_is_byte_identical() {
    let a = generate_synthetic(300, 12, 6, 0.3, 99).unwrap();
    let b = generate_synthetic(300, 12, 6, 0.3, 99).unwrap();
    for (x, y) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
        assert_eq!(x.to_jsonl(), y.to_jsonl());
    }
    let c = generate_synthetic(300, 12, 6, 0.3, 100).unwrap();
    assert_ne!(a.0.to_jsonl(), c.0.to_jsonl());
}

#[test]
fn equal_signatures_carry_equal_labels_across_splits() {
    let (train, val, test) = generate_synthetic(500, 15, 8, 0.3, 4).unwrap();
    let mut atom: BTreeMap<AtomSignature, u32> = BTreeMap::new();
    let mut bond: BTreeMap<BondSignature, u32> = BTreeMap::new();
    for r in train.records.iter().chain(&val.records).chain(&test.records) {
        let adj = r.adjacency();
        for v in 0..r.n_nodes() {
            let s = AtomSignature::of(r, &adj, v, None);
            assert_eq!(*atom.entry(s).or_insert(r.atom_labels[v]), r.atom_labels[v]);
        }
        for e in 0..r.n_edges() {
            let s = BondSignature::of(r, &adj, e);
            assert_eq!(*bond.entry(s).or_insert(r.bond_labels[e]), r.bond_labels[e]);
        }
    }
}

#[test]
fn generated_records_validate_and_have_one_center() {
    let (train, val, test) = generate_synthetic(200, 10, 5, 0.2, 8).unwrap();
    for d in [&train, &val, &test] {
        d.validate().unwrap();
        for r in &d.records {
            assert_eq!(r.centers().len(), 1);
            assert!((6..=20).contains(&r.n_nodes()));
        }
    }
}

#[test]
fn malformed_record_reports_its_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bad_line = rng.gen_range(3..6);
    let mut text = String::from("{\"n_atom_templates\":1,\"n_bond_templates\":1,\"node_vocab\":1,\"edge_vocab\":1}\n");
    for i in 2..8 {
        if i == bad_line {
            text.push_str("{\"nodes\":[0],\"edges\":\n");
        } else {
            text.push_str("{\"nodes\":[0],\"edges\":[],\"atom_labels\":[0],\"bond_labels\":[],\"class\":1}\n");
        }
    }
    match Dataset::from_jsonl(&text) {
        Err(retroknn::Error::Parse { line, .. }) => assert_eq!(line, bad_line),
        other => panic!("expected parse error, got {other:?}"),
    }
}
