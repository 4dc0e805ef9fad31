mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use privgraph::feature_store::*;
use privgraph::harness::*;
use privgraph::models::*;
use privgraph::numcore::{ParameterStore, SlotKind, Tape, Tensor2};
use privgraph::prior_graph::*;

fn labels_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, 6..120).prop_map(|mut v| {
        v[0] = 0;
        v[1] = 1;
        v
    })
}

fn records_strategy() -> impl Strategy<Value = (usize, Vec<ImageRecord>)> {
    (1usize..8, 2usize..40, any::<u64>()).prop_map(|(k_o, n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = random_records(&mut rng, k_o, n);
        r[0].label = 0;
        r[1].label = 1;
        (k_o, r)
    })
}

proptest! {
    #[test]
    fn folds_partition_and_stratify(labels in labels_strategy(), k in 2usize..6, seed in any::<u64>()) {
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), labels.len());
        let overall = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        for f in 0..k {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
            prop_assert!(!members.is_empty());
            let private = members.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let frac = private / members.len() as f64;
            prop_assert!((frac - overall).abs() <= 1.0 / members.len() as f64 + 1e-12);
        }
        for fold_index in 0..k {
            let splits: Vec<Split> = folds.iter().map(|&f| fold_to_split(f, fold_index, k)).collect();
            let n_test = splits.iter().filter(|&&s| s == Split::Test).count();
            prop_assert_eq!(n_test, folds.iter().filter(|&&f| f == fold_index).count());
        }
    }

    #[test]
    fn cardinality_ignores_detection_order((k_o, records) in records_strategy(), seed in any::<u64>()) {
        let vocab = toy_vocab(k_o, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in &records {
            let mut shuffled = r.clone();
            shuffled.detections.shuffle(&mut rng);
            prop_assert_eq!(cardinality_vector(r, &vocab), cardinality_vector(&shuffled, &vocab));
            prop_assert_eq!(confidence_vector(r, &vocab), confidence_vector(&shuffled, &vocab));
            let total: f64 = cardinality_vector(r, &vocab).iter().sum();
            prop_assert_eq!(total as usize, r.detections.len());
        }
    }

    #[test]
    fn normalisation_round_trip(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 2..30)) {
        let stats = NormalizationStats::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| stats.apply(r)).collect();
        for (r, zr) in rows.iter().zip(&z) {
            let back = stats.invert(zr);
            for c in 0..4 {
                let constant = rows.iter().all(|x| x[c] == rows[0][c]);
                if constant {
                    prop_assert_eq!(zr[c], 0.0);
                } else {
                    prop_assert!((back[c] - r[c]).abs() < 1e-9);
                }
            }
        }
        for c in 0..4 {
            let col: Vec<f64> = z.iter().map(|r| r[c]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var.sqrt() < 1e-9 || (var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn frequency_entries_are_probabilities((k_o, records) in records_strategy()) {
        let vocab = toy_vocab(k_o, 1);
        let refs: Vec<_> = records.iter().collect();
        let g = build_frequency_graph(&refs, &vocab).unwrap();
        for v in 0..k_o {
            for y in 0..2 {
                let a = g.get(v, k_o + y);
                prop_assert!((0.0..=1.0).contains(&a));
                let everywhere = records.iter().filter(|r| r.label as usize == y).all(|r| r.count_of(v) > 0);
                prop_assert_eq!(a == 1.0, everywhere);
            }
        }
    }

    #[test]
    fn cooccurrence_symmetric_zero_diagonal((k_o, records) in records_strategy()) {
        let vocab = toy_vocab(k_o, 1);
        let refs: Vec<_> = records.iter().collect();
        let g = build_cooccurrence_graph(&refs, &vocab);
        prop_assert!(g.is_symmetric());
        for i in 0..g.k {
            prop_assert_eq!(g.get(i, i), 0.0);
        }
    }

    #[test]
    fn graph_ignores_non_training_records((k_o, records) in records_strategy(), seed in any::<u64>()) {
        let vocab = toy_vocab(k_o, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all: Vec<ImageRecord> = records.into_iter().map(|mut r| { r.split = Some(Split::Train); r }).collect();
        let ds = Dataset { name: "a".into(), vocabulary: vocab.clone(), records: all.clone(), header: None };
        let before = build_combined_graph(&ds.subset(Split::Train), &vocab).unwrap();
        for mut r in random_records(&mut rng, k_o, 10) {
            r.split = Some(Split::Test);
            all.push(r);
        }
        let ds = Dataset { name: "b".into(), vocabulary: vocab.clone(), records: all, header: None };
        let after = build_combined_graph(&ds.subset(Split::Train), &vocab).unwrap();
        prop_assert_eq!(&before, &after);
        let text = after.to_json();
        let back = PriorGraph::from_json(&text).unwrap();
        prop_assert_eq!(&back, &after);
        prop_assert_eq!(back.to_json(), text);
        for mode in [MaskMode::GpaObjects, MaskMode::GipBipartite] {
            let m = mask_and_binarise(&after, mode);
            prop_assert_eq!(PriorGraph::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn softmax_and_cross_entropy(rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 2), 1..20), labels_seed in any::<u64>()) {
        let t0 = Tensor2::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..rows.len()).map(|i| ((labels_seed >> (i % 64)) & 1) as usize).collect();
        let mut t = Tape::new(false, 0);
        let z = t.constant(t0);
        let p = t.softmax(z);
        for r in 0..rows.len() {
            prop_assert!((t.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ce = t.cross_entropy(p, &labels, None);
        let sce = t.softmax_cross_entropy(z, &labels, Some(&[0.5, 2.0]));
        prop_assert!(t.value(ce).get(0, 0) >= 0.0);
        prop_assert!(t.value(sce).get(0, 0) >= 0.0);
    }

    #[test]
    fn dropout_modes(vals in prop::collection::vec(-5.0f64..5.0, 1..60), p in 0.05f64..0.9, seed in any::<u64>()) {
        let x = Tensor2::row_vector(vals.clone());
        let mut eval = Tape::new(false, seed);
        let xe = eval.constant(x.clone());
        let ye = eval.dropout(xe, p);
        prop_assert_eq!(eval.value(ye), &x);
        let mut train = Tape::new(true, seed);
        let xt = train.constant(x);
        let yt = train.dropout(xt, p);
        for (y, v) in train.value(yt).data().iter().zip(&vals) {
            prop_assert!(*y == 0.0 || (y - v / (1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_identities(truth in prop::collection::vec(0usize..2, 1..200), flips in prop::collection::vec(any::<bool>(), 200)) {
        let pred: Vec<usize> = truth.iter().zip(&flips).map(|(&t, &f)| if f { 1 - t } else { t }).collect();
        let m = MetricsReport::from_predictions(&truth, &pred).unwrap();
        for (_, v) in m.scalars() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        prop_assert_eq!(m.accuracy, correct as f64 / truth.len() as f64);
        prop_assert_eq!(m.balanced_accuracy, (m.public.recall + m.private.recall) / 2.0);
        let errors: u64 = m.public.fp + m.public.fn_ + m.private.fp + m.private.fn_;
        prop_assert_eq!(errors, 2 * (truth.len() - correct) as u64);
        if truth.contains(&0) && truth.contains(&1) {
            prop_assert_eq!(MetricsReport::from_predictions(&truth, &vec![1; truth.len()]).unwrap().balanced_accuracy, 0.5);
        }
    }

    #[test]
    fn config_text_round_trip(
        idx in 0usize..PRESETS.len(),
        seed in any::<u32>(),
        lr in 1e-5f64..1e-1,
        patience in 0usize..50,
        width in 1usize..64,
    ) {
        let mut c = ExperimentConfig::from_preset(PRESETS[idx]).unwrap();
        c.train.seed = seed as u64;
        c.train.lr0 = lr;
        c.train.patience = patience;
        if let Predictor::Model(m) = &mut c.predictor {
            m.width = width;
        }
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
        let mut bad = c.clone();
        prop_assert!(bad.set("definitely_not_a_key", "1").unwrap_err().is_validation());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn models_emit_distributions(idx in 0usize..GRADCHECK_PRESETS.len(), seed in 0u64..1000, shift in -20.0f64..20.0) {
        let vocab = toy_vocab(4, 6);
        let spec = small_spec(GRADCHECK_PRESETS[idx], &vocab);
        let mut ds = small_dataset(&vocab, 10, seed);
        ds.records[0].detections.clear();
        ds.records[0].deep_object_features.clear();
        let train = ds.indices(Split::Train);
        let enc = encode(&spec, &ds, None, &train, seed).unwrap();
        let g = build_combined_graph(&ds.subset(Split::Train), &vocab).unwrap();
        let graph = resolve_graph(&spec, &ds, Some(&g)).unwrap().map(|g| GraphInputs::from_graph(&g));
        let store = init_store(&spec, seed).unwrap();
        let idx_all: Vec<usize> = (0..ds.records.len()).collect();
        let mut t = Tape::new(false, 0);
        let z = logits(&spec, &mut t, &store, &enc, graph.as_ref(), &idx_all);
        let p = t.softmax(z);
        let shifted = {
            let zs = t.value(z).map(|v| v + shift);
            let c = t.constant(zs);
            t.softmax(c)
        };
        t.status().unwrap();
        for r in 0..idx_all.len() {
            let row = t.value(p).row(r).to_vec();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| v.is_finite()));
            prop_assert_eq!(predict_label(&row), predict_label(t.value(shifted).row(r)));
        }
        let mut again = Tape::new(false, 0);
        let z2 = logits(&spec, &mut again, &store, &enc, graph.as_ref(), &idx_all);
        prop_assert_eq!(t.value(z), again.value(z2));
    }

    #[test]
    fn inventory_matches_store(idx in 0usize..PRESETS.len(), depth in 1usize..5, width in 1usize..24) {
        let Predictor::Model(mut spec) = preset(PRESETS[idx]).unwrap() else { return Ok(()) };
        if matches!(spec.kind, ModelKind::Mlp | ModelKind::Gamlp) {
            spec.depth = depth;
            spec.width = width;
        }
        if spec.kind == ModelKind::MlpImage || spec.scheme == NodeScheme::Deep {
            // Full-size inventories are checked by count only.
            let c = count_parameters(&spec);
            let shapes: usize = param_shapes(&spec).iter().filter(|s| !s.buffer).map(|s| s.len()).sum();
            prop_assert_eq!(c.optimised, shapes);
            return Ok(());
        }
        let c = count_parameters(&spec);
        let store: ParameterStore = init_store(&spec, 1).unwrap();
        let by_kind = |k: SlotKind| store.slots().iter().filter(|s| s.kind == k).map(|s| s.value.len()).sum::<usize>();
        prop_assert_eq!(c.optimised, by_kind(SlotKind::Trainable) + by_kind(SlotKind::Frozen));
        prop_assert_eq!(c.pretrained_frozen, by_kind(SlotKind::Frozen));
        let brute: usize = c.components.iter().map(|(_, n)| n).sum();
        prop_assert_eq!(brute, by_kind(SlotKind::Trainable) + by_kind(SlotKind::Frozen));
    }

    #[test]
    fn ablated_graph_isolates_privacy_nodes(seed in 0u64..1000) {
        let vocab = toy_vocab(4, 6);
        let spec = small_spec("gpa-no-graph", &vocab);
        let ds = small_dataset(&vocab, 8, seed);
        let mut moved = ds.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in &mut moved.records {
            r.detections = random_records(&mut rng, 4, 1).remove(0).detections;
        }
        let train = ds.indices(Split::Train);
        let store = init_store(&spec, seed).unwrap();
        let graph = GraphInputs::from_graph(&PriorGraph::zero(&vocab));
        let run = |d: &Dataset| {
            let enc = encode(&spec, d, None, &train, seed).unwrap();
            let mut t = Tape::new(false, 0);
            let z = logits(&spec, &mut t, &store, &enc, Some(&graph), &train);
            t.value(z).clone()
        };
        prop_assert_eq!(run(&ds), run(&moved));
    }

    #[test]
    fn dataset_file_round_trip(seed in any::<u64>(), mode_idx in 0usize..3) {
        let vocab = toy_vocab(5, 7);
        let mode = [SynthMode::Both, SynthMode::SceneOnly, SynthMode::CardinalityOnly][mode_idx];
        let cfg = SynthConfig { n_train: 12, n_val: 4, n_test: 4, seed, mode, deep_dim: 2, image_dim: 3, pixel_dim: 5, ..SynthConfig::default() };
        let ds = generate(&cfg, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        write_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, &vocab).unwrap();
        prop_assert_eq!(&back.records, &ds.records);
        let csv = dir.path().join("split.csv");
        write_split_csv(&csv, &ds).unwrap();
        let mut cleared = back.clone();
        for r in &mut cleared.records {
            r.split = None;
        }
        apply_split_csv(&csv, &mut cleared).unwrap();
        prop_assert_eq!(&cleared.records, &ds.records);
    }
}
