mod common;

use common::{aa_box, unit_vec};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use protomine::bank::collect_class_features;
use protomine::io::synth::{synth_corpus, SynthSpec};
use protomine::io::sparsify::{sparsify, SparsifyMode};
use protomine::{init_bank, ClassBox, Config, Proposal, Scene};
use rand::Rng;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

fn proposal(center: [f64; 3], feature: Vec<f64>, scores: Vec<f64>) -> Proposal {
    Proposal {
        feature,
        scores,
        bbox: aa_box(center, [0.5, 0.5, 0.5]),
        center,
    }
}

#[test]
fn scannet_sized_bank() {
    let mut cfg = Config::new(18, 128);
    cfg.protos_per_class = 10;
    let bank = init_bank(&cfg);
    assert_eq!(bank.prototypes.dim(), (18, 10, 128));
    assert_eq!(bank.prototypes.len(), 18 * 10 * 128);
    assert!(bank.prototypes.iter().all(|x| x.is_finite()));
    for lane in bank.prototypes.lanes(Axis(2)) {
        assert!((lane.dot(&lane).sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn class_features_follow_both_conditions() {
    // Five proposals: two inside the class-1 sparse box, of which only one
    // scores class 1 highest.
    let scene = Scene {
        scene_id: "s".into(),
        proposals: vec![
            proposal([0.0, 0.0, 0.0], vec![1.0, 0.0], vec![0.2, 0.7]),
            proposal([0.3, 0.1, 0.0], vec![0.0, 1.0], vec![0.8, 0.1]),
            proposal([5.0, 5.0, 0.0], vec![0.6, 0.8], vec![0.1, 0.9]),
            proposal([3.0, 0.0, 0.0], vec![0.8, 0.6], vec![0.3, 0.6]),
            proposal([-5.0, 0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]),
        ],
        sparse_labels: vec![ClassBox {
            class_id: 1,
            bbox: aa_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
        }],
        gt_labels: None,
        point_range: [-10.0, -10.0, -1.0, 10.0, 10.0, 1.0],
    };
    // Hand enumeration: inside = {0, 1}; top class 1 = {0, 2, 3, 4}.
    let f1 = collect_class_features(&scene, 1);
    assert_eq!(f1, Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap());
    assert_eq!(collect_class_features(&scene, 0).nrows(), 0);
}

#[test]
fn empty_scene_only_advances_iteration() {
    let cfg = Config::new(3, 4);
    let mut bank = init_bank(&cfg);
    let before = bank.prototypes.clone();
    let scene = Scene {
        scene_id: "e".into(),
        proposals: vec![proposal([0.0; 3], vec![1.0, 0.0, 0.0, 0.0], vec![0.9, 0.0, 0.0])],
        sparse_labels: vec![],
        gt_labels: None,
        point_range: [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
    };
    let updates = bank.process_scene(&scene, &cfg).unwrap();
    assert!(updates.is_empty());
    assert_eq!(bank.prototypes, before);
    assert_eq!(bank.iteration, 1);
    assert_eq!(bank.class_update_counts, vec![0, 0, 0]);
}

#[test]
fn two_labelled_classes_bump_two_counters() {
    let cfg = Config::new(4, 3);
    let mut bank = init_bank(&cfg);
    let scene = Scene {
        scene_id: "t".into(),
        proposals: vec![
            proposal([0.0; 3], vec![1.0, 0.0, 0.0], vec![0.9, 0.0, 0.0, 0.0]),
            proposal([5.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.8, 0.1]),
        ],
        sparse_labels: vec![
            ClassBox { class_id: 0, bbox: aa_box([0.0; 3], [1.0; 3]) },
            ClassBox { class_id: 2, bbox: aa_box([5.0, 0.0, 0.0], [1.0; 3]) },
        ],
        gt_labels: None,
        point_range: [-1.0, -1.0, -1.0, 6.0, 1.0, 1.0],
    };
    bank.process_scene(&scene, &cfg).unwrap();
    assert_eq!(bank.class_update_counts, vec![1, 0, 1, 0]);
}

#[test]
fn replaying_a_stream_is_bit_identical() {
    let corpus = sparsify(
        synth_corpus::<f64>(&SynthSpec::with_noise(10, 6, 3, 8, 0.5, 4)).unwrap(),
        SparsifyMode::OnePerClassPerScene,
        4,
    )
    .unwrap();
    let cfg = Config::new(3, 8);
    let run = || {
        let mut bank = init_bank(&cfg);
        for s in &corpus.scenes {
            bank.process_scene(&protomine::normalize_features(s.clone()).unwrap(), &cfg).unwrap();
        }
        bank.to_text()
    };
    assert_eq!(run(), run());
}

/// Two orthogonal clusters, O = 2, 50 repeated batches of 10 + 10 features.
/// The oracle assigns every feature to its nearest centroid and keeps a plain
/// running mean.
#[test]
fn two_clusters_match_kmeans_oracle() {
    let c = 16;
    let mut rng = common::rng(5);
    let mut e = [vec![0.0; c], vec![0.0; c]];
    e[0][0] = 1.0;
    e[1][1] = 1.0;
    let sample = |rng: &mut rand_chacha::ChaCha8Rng, dir: &[f64]| {
        let mut v: Vec<f64> = dir.iter().map(|x| x + 0.15 * rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let mut cfg = Config::new(1, c);
    cfg.protos_per_class = 2;
    cfg.seed = 9;
    let mut bank = init_bank(&cfg);

    let mut oracle: Vec<Vec<f64>> = bank.class_prototypes(0).rows().into_iter().map(|r| r.to_vec()).collect();
    let mut oracle_n = [0usize; 2];
    let mut cluster_sum = [vec![0.0; c], vec![0.0; c]];

    for _ in 0..50 {
        let mut rows = Vec::new();
        for (k, dir) in e.iter().enumerate() {
            for _ in 0..10 {
                let f = sample(&mut rng, dir);
                cluster_sum[k].iter_mut().zip(&f).for_each(|(s, x)| *s += x);
                rows.push(f);
            }
        }
        for f in &rows {
            let j = if cos(f, &oracle[0]) >= cos(f, &oracle[1]) { 0 } else { 1 };
            oracle_n[j] += 1;
            let n = oracle_n[j] as f64;
            if oracle_n[j] == 1 {
                oracle[j] = f.clone();
            } else {
                oracle[j].iter_mut().zip(f).for_each(|(m, x)| *m += (x - *m) / n);
            }
        }
        let feats = Array2::from_shape_fn((rows.len(), c), |(i, x)| rows[i][x]);
        bank.update_class(0, feats.view(), &cfg).unwrap();
    }

    let protos: Vec<Vec<f64>> = bank.class_prototypes(0).rows().into_iter().map(|r| r.to_vec()).collect();
    for p in &protos {
        let best = cluster_sum.iter().map(|m| 1.0 - cos(p, m)).fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "prototype is {best} from nearest cluster mean");
    }
    // Both methods split the clusters the same way.
    for (p, o) in protos.iter().zip(&oracle) {
        assert!(1.0 - cos(p, o) < 0.05);
    }
    assert!(cos(&protos[0], &protos[1]) < 0.5);
}

#[test]
fn constant_feature_contracts_monotonically() {
    let c = 8;
    let mut rng = common::rng(3);
    let f = unit_vec(&mut rng, c);
    let cfg = Config::new(2, c);
    let mut bank = init_bank(&cfg);
    let feats = Array2::from_shape_vec((1, c), f.clone()).unwrap();
    let mut last = vec![f64::NEG_INFINITY; cfg.protos_per_class];
    let mut reached = None;
    for step in 0..100 {
        let upd = bank.update_class(1, feats.view(), &cfg).unwrap();
        let j = upd.assignments[0];
        for (o, prev) in last.iter_mut().enumerate() {
            let now = cos(bank.prototypes.slice(ndarray::s![1, o, ..]).as_slice().unwrap(), &f);
            assert!(now >= *prev - 1e-12, "prototype {o} moved away at step {step}");
            *prev = now;
        }
        if reached.is_none() && last[j] > 0.99 {
            reached = Some(step);
        }
    }
    assert!(reached.is_some(), "never reached 0.99");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_norm_and_class_isolation(
        seed in 0u64..1000,
        batches in prop::collection::vec((0usize..3, 1usize..12), 1..20),
    ) {
        let c = 6;
        let mut rng = common::rng(seed);
        let mut cfg = Config::new(3, c);
        cfg.protos_per_class = 4;
        cfg.seed = seed;
        let mut bank = init_bank(&cfg);
        for (class_id, m) in batches {
            let before = bank.prototypes.clone();
            let rows: Vec<f64> = (0..m).flat_map(|_| unit_vec(&mut rng, c)).collect();
            let feats = Array2::from_shape_vec((m, c), rows).unwrap();
            bank.update_class(class_id, feats.view(), &cfg).unwrap();
            for other in (0..3).filter(|&k| k != class_id) {
                let a = before.index_axis(Axis(0), other);
                let b = bank.prototypes.index_axis(Axis(0), other);
                prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            for lane in bank.prototypes.lanes(Axis(2)) {
                prop_assert!((lane.dot(&lane).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
